mod cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vinestep::Error;

#[derive(Parser, Debug)]
#[command(name = "vinestep", version, about = "Vine copula simulation, stepwise estimation and study driver")]
pub struct Cli {
    /// Worker threads (falls back to VINESTEP_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw a sample from a vine and write it as a headerless CSV.
    Simulate(SimulateArgs),
    /// Stepwise maximum-likelihood fit of a sample.
    Fit(FitArgs),
    /// Run a replicated simulation study over a (d, n) grid.
    Study(StudyArgs),
    /// Monte-Carlo curvature statistic.
    #[command(name = "validate-a3")]
    ValidateA3(ValidateArgs),
    /// Monte-Carlo M_n^2 and D_n estimates.
    #[command(name = "validate-mndn")]
    ValidateMnDn(ValidateArgs),
    /// Interpolate mean errors of a study along growth regimes.
    Regimes(RegimesArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long)]
    pub structure: Option<String>,
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long = "theta-model")]
    pub theta_model: Option<String>,
    #[arg(long = "theta-scale")]
    pub theta_scale: Option<f64>,
    /// Degrees of freedom for Student's t edges.
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub trunc: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Model or fit JSON to simulate from instead of a theta model.
    #[arg(long = "model")]
    pub model_json: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub structure: Option<String>,
    /// Structure JSON for a general R-vine.
    #[arg(long = "structure-json")]
    pub structure_json: Option<PathBuf>,
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub trunc: Option<usize>,
    /// known | empirical
    #[arg(long)]
    pub margins: Option<String>,
    /// Also write per-edge estimates as CSV.
    #[arg(long = "edges-csv")]
    pub edges_csv: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct StudyArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_delimiter = ',')]
    pub d: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub margins: Option<String>,
    #[arg(long = "study-id")]
    pub study_id: Option<String>,
    #[arg(long = "record-timing")]
    pub record_timing: bool,
}

#[derive(Args, Debug, Clone)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_delimiter = ',')]
    pub d: Option<Vec<usize>>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Number of perturbation draws.
    #[arg(long = "K")]
    pub k: Option<usize>,
    /// Monte-Carlo rows; defaults to ceil(2000 ln d) or ceil(200 ln d).
    #[arg(long = "N")]
    pub n: Option<usize>,
    /// constant | constant:<c> | linear | custom:<a1>,<a2>,...
    #[arg(long)]
    pub alpha: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct RegimesArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long = "study-id")]
    pub study_id: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub regimes: Option<Vec<String>>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Domain(_) | Error::Convergence { .. } | Error::Support(_) => 1,
        _ => 2,
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Domain(_) | Error::Convergence { .. } | Error::Support(_) => "numerical",
        Error::Io(_) => "io",
        _ => "config",
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match cmd::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({ "error": kind(&e), "message": e.to_string() });
            eprintln!("{msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
