//! Subcommand runners. Every subcommand reads an optional JSON config,
//! overlays the flags given on the command line, checks the result against
//! a typed config and writes it next to the output as `<out>.config.json`.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use vinestep::estimate::{estimate, MarginsMode};
use vinestep::io::{read_matrix_csv, write_json, write_matrix_csv};
use vinestep::simstudy::{
    read_study_csv, regime_csv, regime_table, run_study, study_csv, Regime, StudyConfig, ThetaSidecar,
};
use vinestep::validate::{
    default_n_a3, default_n_mn, estimate_a3, estimate_mn_dn, validation_csv, AlphaSeq, ValidationRow,
};
use vinestep::vinemodel::{ModelJson, ThetaModel, DEFAULT_NU};
use vinestep::vinestruct::StructureJson;
use vinestep::{Error, FamilyTag, RVineStructure, Result, StructureKind, ThetaModelSpec, VineModel};

use crate::{Cli, Command, Common, FitArgs, ModelArgs, RegimesArgs, SimulateArgs, StudyArgs, ValidateArgs};

type Obj = Map<String, Value>;

fn load(common: &Common) -> Result<Obj> {
    let Some(path) = &common.config else {
        return Ok(Obj::new());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(Error::Config(format!("{}: config must be a JSON object", path.display()))),
        Err(e) => Err(Error::Config(format!("{}: {e}", path.display()))),
    }
}

fn put<T: Serialize>(m: &mut Obj, key: &str, v: Option<T>) {
    if let Some(v) = v {
        m.insert(key.to_string(), serde_json::to_value(v).expect("plain value"));
    }
}

fn parsed<T: std::str::FromStr<Err = Error>>(s: &Option<String>) -> Result<Option<T>> {
    s.as_deref()
        .map(|x| x.parse::<T>().map_err(|e| Error::Config(e.to_string())))
        .transpose()
}

fn put_model(m: &mut Obj, a: &ModelArgs) -> Result<()> {
    put(m, "structure", parsed::<StructureKind>(&a.structure)?);
    put(m, "family", parsed::<FamilyTag>(&a.family)?);
    put(m, "nu", a.nu);
    put(m, "trunc", a.trunc);
    put(m, "seed", a.seed);
    let name = parsed::<ThetaModel>(&a.theta_model)?;
    if name.is_some() || a.theta_scale.is_some() {
        let tm = m
            .entry("theta_model")
            .or_insert_with(|| Value::Object(Obj::new()));
        if let Value::String(s) = tm {
            *tm = serde_json::json!({ "name": s.clone() });
        }
        let Value::Object(tm) = tm else {
            return Err(Error::Config("theta_model must be an object".into()));
        };
        put(tm, "name", name);
        put(tm, "scale", a.theta_scale);
    }
    Ok(())
}

/// Removes and returns the output path.
fn take_out(m: &mut Obj, common: &Common) -> Result<PathBuf> {
    put(m, "out", common.out.clone());
    match m.remove("out") {
        Some(Value::String(s)) => Ok(PathBuf::from(s)),
        Some(_) => Err(Error::Config("out must be a path".into())),
        None => Err(Error::Config("missing --out".into())),
    }
}

fn typed<T: DeserializeOwned>(m: Obj) -> Result<T> {
    serde_json::from_value(Value::Object(m)).map_err(|e| Error::Config(e.to_string()))
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Serialize)]
struct Sidecar<'a, T: Serialize> {
    subcommand: &'a str,
    out: &'a Path,
    config: &'a T,
}

fn write_sidecar<T: Serialize>(subcommand: &str, out: &Path, config: &T) -> Result<()> {
    write_json(
        &with_suffix(out, ".config.json"),
        &Sidecar {
            subcommand,
            out,
            config,
        },
    )
}

fn default_nu() -> f64 {
    DEFAULT_NU
}

fn default_known() -> MarginsMode {
    MarginsMode::Known
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    n: usize,
    #[serde(default)]
    seed: u64,
    /// Model or fit JSON; replaces the fields below.
    #[serde(default)]
    model: Option<PathBuf>,
    #[serde(default)]
    structure: Option<StructureKind>,
    #[serde(default)]
    family: Option<FamilyTag>,
    #[serde(default)]
    d: Option<usize>,
    #[serde(default)]
    theta_model: Option<ThetaModelSpec>,
    #[serde(default = "default_nu")]
    nu: f64,
    #[serde(default)]
    trunc: Option<usize>,
}

fn read_model(path: &Path) -> Result<VineModel> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read model {}: {e}", path.display())))?;
    let j: ModelJson = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    VineModel::from_json(&j)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut m = load(&a.common)?;
    put_model(&mut m, &a.model)?;
    put(&mut m, "d", a.d);
    put(&mut m, "n", a.n);
    put(&mut m, "model", a.model_json.clone());
    let out = take_out(&mut m, &a.common)?;
    let cfg: SimulateConfig = typed(m)?;
    let model = match &cfg.model {
        Some(p) => read_model(p)?,
        None => {
            let missing = |k: &str| Error::Config(format!("missing {k} (or give --model)"));
            let kind = cfg.structure.ok_or_else(|| missing("structure"))?;
            let family = cfg.family.ok_or_else(|| missing("family"))?;
            let d = cfg.d.ok_or_else(|| missing("d"))?;
            let tm = cfg.theta_model.ok_or_else(|| missing("theta_model"))?;
            if d < 2 {
                return Err(Error::Config(format!("d must be at least 2, got {d}")));
            }
            let s = RVineStructure::build(kind, d, cfg.trunc.unwrap_or(d - 1).min(d - 1))?;
            VineModel::from_theta_model(s, family, &tm, cfg.nu)?
        }
    };
    let u = model.simulate(cfg.n, cfg.seed)?;
    write_matrix_csv(&out, &u)?;
    write_sidecar("simulate", &out, &cfg)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitConfig {
    #[serde(rename = "in")]
    input: PathBuf,
    #[serde(default)]
    structure: Option<StructureKind>,
    #[serde(default)]
    structure_json: Option<PathBuf>,
    family: FamilyTag,
    #[serde(default)]
    trunc: Option<usize>,
    #[serde(default = "default_known")]
    margins: MarginsMode,
    #[serde(default)]
    edges_csv: Option<PathBuf>,
}

fn fit(a: FitArgs) -> Result<()> {
    let mut m = load(&a.common)?;
    put(&mut m, "in", a.input.clone());
    put(&mut m, "structure", parsed::<StructureKind>(&a.structure)?);
    put(&mut m, "structure_json", a.structure_json.clone());
    put(&mut m, "family", parsed::<FamilyTag>(&a.family)?);
    put(&mut m, "trunc", a.trunc);
    put(&mut m, "margins", parsed::<MarginsMode>(&a.margins)?);
    put(&mut m, "edges_csv", a.edges_csv.clone());
    let out = take_out(&mut m, &a.common)?;
    let cfg: FitConfig = typed(m)?;
    let data = read_matrix_csv(&cfg.input)?;
    let d = data.ncols();
    let structure = match (&cfg.structure_json, cfg.structure) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read structure {}: {e}", p.display())))?;
            let j: StructureJson =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            let s = RVineStructure::from_json(&j)?;
            match cfg.trunc {
                Some(t) => s.truncated(t)?,
                None => s,
            }
        }
        (None, Some(kind)) => {
            if d < 2 {
                return Err(Error::Config("data needs at least two columns".into()));
            }
            RVineStructure::build(kind, d, cfg.trunc.unwrap_or(d - 1).min(d - 1))?
        }
        (None, None) => return Err(Error::Config("missing --structure or --structure-json".into())),
    };
    let families = vec![cfg.family; structure.n_edges()];
    let res = estimate(&families, &structure, &data, cfg.margins)?;
    write_json(&out, &res.to_json())?;
    if let Some(p) = &cfg.edges_csv {
        std::fs::write(p, res.to_csv())?;
    }
    if res.flagged_count() > 0 {
        eprintln!("warning: {} edge(s) not converged or at a domain boundary", res.flagged_count());
    }
    write_sidecar("fit", &out, &cfg)
}

fn study(a: StudyArgs) -> Result<()> {
    let mut m = load(&a.common)?;
    put_model(&mut m, &a.model)?;
    put(&mut m, "d", a.d.clone());
    put(&mut m, "n", a.n.clone());
    put(&mut m, "replications", a.reps);
    put(&mut m, "margins_mode", parsed::<MarginsMode>(&a.margins)?);
    put(&mut m, "study_id", a.study_id.clone());
    if a.record_timing {
        put(&mut m, "record_timing", Some(true));
    }
    let out = take_out(&mut m, &a.common)?;
    let cfg: StudyConfig = typed(m)?;
    cfg.validate()?;
    let rows = run_study(&cfg)?;
    for r in rows.iter().filter(|r| r.failed()) {
        eprintln!(
            "warning: d={} n={} rep={} failed: {}",
            r.d,
            r.n,
            r.rep,
            r.error.as_deref().unwrap_or("")
        );
    }
    std::fs::write(&out, study_csv(&rows)?)?;
    write_json(&with_suffix(&out, ".theta.json"), &ThetaSidecar::new(&cfg, &rows))?;
    write_sidecar("study", &out, &cfg)
}

fn gaussian() -> FamilyTag {
    FamilyTag::Gaussian
}

fn default_eps() -> f64 {
    0.005
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ValidateConfig {
    structure: StructureKind,
    #[serde(default = "gaussian")]
    family: FamilyTag,
    theta_model: ThetaModelSpec,
    #[serde(default = "default_nu")]
    nu: f64,
    d: Vec<usize>,
    #[serde(default = "default_eps")]
    eps: f64,
    #[serde(rename = "K", default)]
    k: Option<usize>,
    #[serde(rename = "N", default)]
    n: Option<usize>,
    #[serde(default)]
    alpha: AlphaSeq,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    trunc: Option<usize>,
}

fn validate(a: ValidateArgs, which: &str) -> Result<()> {
    let mut m = load(&a.common)?;
    put_model(&mut m, &a.model)?;
    put(&mut m, "d", a.d.clone());
    put(&mut m, "eps", a.eps);
    put(&mut m, "K", a.k);
    put(&mut m, "N", a.n);
    put(&mut m, "alpha", parsed::<AlphaSeq>(&a.alpha)?);
    let out = take_out(&mut m, &a.common)?;
    let mut cfg: ValidateConfig = typed(m)?;
    let a3 = which == "validate-a3";
    cfg.k = Some(cfg.k.unwrap_or(if a3 { 50 } else { 30 }));
    if cfg.d.is_empty() || cfg.d.iter().any(|&d| d < 2) {
        return Err(Error::Config("d must list dimensions of at least 2".into()));
    }
    if !a3 && cfg.family != FamilyTag::Gaussian {
        return Err(Error::Config("validate-mndn needs a gaussian vine".into()));
    }
    let k = cfg.k.unwrap();
    let mut rows = Vec::with_capacity(cfg.d.len());
    for &d in &cfg.d {
        let s = RVineStructure::build(cfg.structure, d, cfg.trunc.unwrap_or(d - 1).min(d - 1))?;
        let model = VineModel::from_theta_model(s, cfg.family, &cfg.theta_model, cfg.nu)?;
        let n = cfg.n.unwrap_or(if a3 { default_n_a3(d) } else { default_n_mn(d) });
        let mut row = ValidationRow {
            d,
            p: model.param_count(),
            theta_model: vinestep::simstudy::theta_label(&cfg.theta_model),
            alpha_rule: cfg.alpha.rule().to_string(),
            eps: cfg.eps,
            k,
            n,
            seed: cfg.seed,
            a3_hat: None,
            mn2_hat: None,
            dn_hat: None,
        };
        if a3 {
            row.a3_hat = Some(estimate_a3(&model, cfg.eps, &cfg.alpha, k, n, cfg.seed)?);
        } else {
            let r = estimate_mn_dn(&model, cfg.eps, &cfg.alpha, k, n, cfg.seed, None)?;
            row.mn2_hat = Some(r.mn2);
            row.dn_hat = Some(r.dn);
        }
        rows.push(row);
    }
    std::fs::write(&out, validation_csv(&rows)?)?;
    write_sidecar(which, &out, &cfg)
}

fn all_regimes() -> Vec<Regime> {
    Regime::ALL.to_vec()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegimesConfig {
    #[serde(rename = "in")]
    input: PathBuf,
    #[serde(default)]
    study_id: Option<String>,
    #[serde(default = "all_regimes")]
    regimes: Vec<Regime>,
}

fn regimes(a: RegimesArgs) -> Result<()> {
    let mut m = load(&a.common)?;
    put(&mut m, "in", a.input.clone());
    put(&mut m, "study_id", a.study_id.clone());
    if let Some(list) = &a.regimes {
        let r: Vec<Regime> = list
            .iter()
            .map(|s| s.parse().map_err(|e: Error| Error::Config(e.to_string())))
            .collect::<Result<_>>()?;
        put(&mut m, "regimes", Some(r));
    }
    let out = take_out(&mut m, &a.common)?;
    let cfg: RegimesConfig = typed(m)?;
    let mut rows = read_study_csv(&cfg.input).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(id) = &cfg.study_id {
        rows.retain(|r| &r.study_id == id);
    }
    std::fs::write(&out, regime_csv(&regime_table(&rows, &cfg.regimes)?)?)?;
    write_sidecar("regimes", &out, &cfg)
}

fn init_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("VINESTEP_THREADS") {
            Ok(s) if !s.trim().is_empty() => Some(
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("VINESTEP_THREADS=`{s}` is not a count")))?,
            ),
            _ => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::Config("thread count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Study(a) => study(a),
        Command::ValidateA3(a) => validate(a, "validate-a3"),
        Command::ValidateMnDn(a) => validate(a, "validate-mndn"),
        Command::Regimes(a) => regimes(a),
    }
}
