//! Simulation study harness: replicate simulate-then-fit over a grid of
//! dimensions and sample sizes, summarize the estimation error, and
//! interpolate mean errors along growth regimes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{estimate, MarginsMode};
use crate::io::{csv_err, csv_string, fmt_f64};
use crate::paircop::FamilyTag;
use crate::seed::mix;
use crate::special::norm_quantile;
use crate::vinemodel::{ThetaModelSpec, VineModel, DEFAULT_NU};
use crate::vinestruct::{RVineStructure, StructureKind};

fn default_nu() -> f64 {
    DEFAULT_NU
}

fn default_margins() -> MarginsMode {
    MarginsMode::Known
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default)]
    pub study_id: Option<String>,
    pub structure: StructureKind,
    pub family: FamilyTag,
    pub theta_model: ThetaModelSpec,
    #[serde(default = "default_nu")]
    pub nu: f64,
    pub d: Vec<usize>,
    pub n: Vec<usize>,
    /// Defaults to 100, or 50 for Student's t.
    #[serde(default)]
    pub replications: Option<usize>,
    #[serde(default = "default_margins")]
    pub margins_mode: MarginsMode,
    /// Number of stored trees; `None` means the full vine.
    #[serde(default)]
    pub trunc: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Fill `wall_ms`; off by default so reruns are byte-identical.
    #[serde(default)]
    pub record_timing: bool,
}

impl StudyConfig {
    pub fn new(structure: StructureKind, family: FamilyTag, theta_model: ThetaModelSpec) -> Self {
        StudyConfig {
            study_id: None,
            structure,
            family,
            theta_model,
            nu: DEFAULT_NU,
            d: vec![],
            n: vec![],
            replications: None,
            margins_mode: MarginsMode::Known,
            trunc: None,
            seed: 0,
            record_timing: false,
        }
    }

    pub fn replications(&self) -> usize {
        self.replications.unwrap_or(match self.family {
            FamilyTag::StudentT => 50,
            _ => 100,
        })
    }

    pub fn trunc_for(&self, d: usize) -> usize {
        self.trunc.unwrap_or(d - 1).min(d - 1)
    }

    pub fn id(&self) -> String {
        self.study_id.clone().unwrap_or_else(|| {
            let tr = self.trunc.map(|t| format!("-t{t}")).unwrap_or_default();
            format!(
                "{}-{}-{}-{}{tr}",
                self.structure,
                self.family,
                theta_label(&self.theta_model),
                self.margins_mode
            )
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.structure == StructureKind::General {
            return bad("study structure must be cvine or dvine".into());
        }
        if self.family == FamilyTag::Independence {
            return bad("independence has no parameters to estimate".into());
        }
        if self.d.is_empty() || self.n.is_empty() {
            return bad("d and n lists must be non-empty".into());
        }
        if let Some(&d) = self.d.iter().find(|&&d| d < 2) {
            return bad(format!("dimension {d} < 2"));
        }
        if let Some(&n) = self.n.iter().find(|&&n| n < crate::estimate::MIN_PAIRS) {
            return bad(format!("sample size {n} too small"));
        }
        if self.replications() == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.trunc == Some(0) {
            return bad("trunc must be at least 1".into());
        }
        if !self.theta_model.scale.is_finite() {
            return bad("theta scale must be finite".into());
        }
        // Checks that theta* is inside the family's domain.
        true_model(self, *self.d.iter().max().unwrap()).map(|_| ())
    }
}

pub fn theta_label(spec: &ThetaModelSpec) -> String {
    if spec.scale == 1.0 {
        spec.name.to_string()
    } else {
        format!("{}x{}", spec.name, spec.scale)
    }
}

/// Data-generating model of one grid column.
pub fn true_model(config: &StudyConfig, d: usize) -> Result<VineModel> {
    let s = RVineStructure::build(config.structure, d, config.trunc_for(d))?;
    VineModel::from_theta_model(s, config.family, &config.theta_model, config.nu)
}

/// Parameters entering the error statistics: every parameter, except that
/// Student's t edges contribute only their correlation.
pub fn stat_indices(model: &VineModel) -> Vec<usize> {
    let off = model.param_offsets();
    model
        .copulas
        .iter()
        .enumerate()
        .flat_map(|(e, c)| match c.family() {
            FamilyTag::StudentT => off[e]..off[e] + 1,
            _ => off[e]..off[e + 1],
        })
        .collect()
}

/// `sqrt(n / ln d) * err_inf`.
pub fn maxnorm_stat(err_inf: f64, n: usize, d: usize) -> f64 {
    (n as f64 / (d as f64).ln()).sqrt() * err_inf
}

/// `sqrt(n) / d * err_sum`.
pub fn sum_stat(err_sum: f64, n: usize, d: usize) -> f64 {
    (n as f64).sqrt() / d as f64 * err_sum
}

/// Both statistics from estimated and true parameters over `idx`.
pub fn error_stats(theta_hat: &[f64], theta_star: &[f64], idx: &[usize], n: usize, d: usize) -> (f64, f64) {
    let mut inf: f64 = 0.0;
    let mut sum = 0.0;
    for &k in idx {
        let e = theta_hat[k] - theta_star[k];
        inf = inf.max(e.abs());
        sum += e;
    }
    (maxnorm_stat(inf, n, d), sum_stat(sum, n, d))
}

pub fn rep_seed(base: u64, d: usize, n: usize, rep: usize) -> u64 {
    mix(&[base, d as u64, n as u64, rep as u64])
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyRow {
    pub study_id: String,
    pub structure: StructureKind,
    pub family: FamilyTag,
    pub theta_model: String,
    pub margins_mode: MarginsMode,
    pub trunc: usize,
    pub d: usize,
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub maxnorm_stat: f64,
    pub sum_stat: f64,
    /// Flagged edges (not converged or at a domain edge); -1 on failure.
    pub nonconverged: i64,
    pub wall_ms: u64,
    /// Empty when the replication failed.
    pub theta_hat: Vec<f64>,
    pub error: Option<String>,
}

pub const STUDY_HEADER: [&str; 14] = [
    "study_id",
    "structure",
    "family",
    "theta_model",
    "margins_mode",
    "trunc",
    "d",
    "n",
    "rep",
    "seed",
    "maxnorm_stat",
    "sum_stat",
    "nonconverged",
    "wall_ms",
];

impl StudyRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn fields(&self) -> Vec<String> {
        vec![
            self.study_id.clone(),
            self.structure.to_string(),
            self.family.to_string(),
            self.theta_model.clone(),
            self.margins_mode.to_string(),
            self.trunc.to_string(),
            self.d.to_string(),
            self.n.to_string(),
            self.rep.to_string(),
            self.seed.to_string(),
            fmt_f64(self.maxnorm_stat),
            fmt_f64(self.sum_stat),
            self.nonconverged.to_string(),
            self.wall_ms.to_string(),
        ]
    }

    /// The row as one CSV line without the trailing newline.
    pub fn csv_line(&self) -> String {
        self.fields().join(",")
    }
}

pub fn study_csv(rows: &[StudyRow]) -> Result<String> {
    csv_string(&STUDY_HEADER, rows.iter().map(StudyRow::fields))
}

/// One replication. Never fails: errors become a flagged row.
pub fn run_cell(config: &StudyConfig, truth: &VineModel, n: usize, rep: usize) -> StudyRow {
    let d = truth.d();
    let seed = rep_seed(config.seed, d, n, rep);
    let start = Instant::now();
    let outcome = (|| -> Result<(Vec<f64>, usize)> {
        let u = truth.simulate(n, seed)?;
        let data = match config.margins_mode {
            MarginsMode::Known => u,
            // Standard normal margins; only the ranks reach the estimator.
            MarginsMode::Empirical => u.map(norm_quantile),
        };
        let fit = estimate(&truth.families(), &truth.structure, &data, config.margins_mode)?;
        Ok((fit.theta_hat(), fit.flagged_count()))
    })();
    let wall_ms = if config.record_timing {
        start.elapsed().as_millis() as u64
    } else {
        0
    };
    let mut row = StudyRow {
        study_id: config.id(),
        structure: config.structure,
        family: config.family,
        theta_model: theta_label(&config.theta_model),
        margins_mode: config.margins_mode,
        trunc: truth.structure.trunc,
        d,
        n,
        rep,
        seed,
        maxnorm_stat: f64::NAN,
        sum_stat: f64::NAN,
        nonconverged: -1,
        wall_ms,
        theta_hat: vec![],
        error: None,
    };
    match outcome {
        Ok((theta_hat, flagged)) => {
            let (m, s) = error_stats(&theta_hat, &truth.theta(), &stat_indices(truth), n, d);
            row.maxnorm_stat = m;
            row.sum_stat = s;
            row.nonconverged = flagged as i64;
            row.theta_hat = theta_hat;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Every (d, n, rep) cell of the grid, ordered by (d, n, rep).
pub fn run_study(config: &StudyConfig) -> Result<Vec<StudyRow>> {
    config.validate()?;
    let mut ds = config.d.clone();
    ds.sort_unstable();
    ds.dedup();
    let mut ns = config.n.clone();
    ns.sort_unstable();
    ns.dedup();
    let mut rows = Vec::new();
    for &d in &ds {
        let truth = true_model(config, d)?;
        let cells: Vec<(usize, usize)> = ns
            .iter()
            .flat_map(|&n| (0..config.replications()).map(move |r| (n, r)))
            .collect();
        rows.extend(
            cells
                .par_iter()
                .map(|&(n, rep)| run_cell(config, &truth, n, rep))
                .collect::<Vec<_>>(),
        );
    }
    Ok(rows)
}

/// Persisted estimates, enough to recompute every statistic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaSidecar {
    pub config: StudyConfig,
    pub rows: Vec<ThetaRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaRecord {
    pub d: usize,
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub theta_hat: Vec<f64>,
}

impl ThetaSidecar {
    pub fn new(config: &StudyConfig, rows: &[StudyRow]) -> Self {
        ThetaSidecar {
            config: config.clone(),
            rows: rows
                .iter()
                .map(|r| ThetaRecord {
                    d: r.d,
                    n: r.n,
                    rep: r.rep,
                    seed: r.seed,
                    theta_hat: r.theta_hat.clone(),
                })
                .collect(),
        }
    }
}

/// Growth regime linking the sample size to the dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Linear,
    Quadratic,
    Cubic,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Linear, Regime::Quadratic, Regime::Cubic];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Linear => "linear",
            Regime::Quadratic => "quadratic",
            Regime::Cubic => "cubic",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(Regime::Linear),
            "quadratic" => Ok(Regime::Quadratic),
            "cubic" => Ok(Regime::Cubic),
            other => Err(Error::Parse(format!("unknown regime `{other}`"))),
        }
    }
}

/// Target sample size for dimension `d`, rounded, at least 50. The cubic
/// regime is `0.005 d^3` for Student's t and `0.003 (d - 50)^3`, defined
/// for `d > 50`, otherwise.
pub fn regime_n(regime: Regime, family: FamilyTag, d: usize) -> Result<usize> {
    let x = d as f64;
    let n = match (regime, family) {
        (Regime::Linear, _) => 25.0 * x,
        (Regime::Quadratic, _) => 0.125 * x * x,
        (Regime::Cubic, FamilyTag::StudentT) => 0.005 * x.powi(3),
        (Regime::Cubic, _) if d > 50 => 0.003 * (x - 50.0).powi(3),
        (Regime::Cubic, _) => {
            return Err(Error::Support(format!("cubic regime needs d > 50, got {d}")));
        }
    };
    Ok((n.round() as usize).max(50))
}

/// Whether a regime point is reported: the cubic curve for Gaussian and
/// Gumbel starts at d = 75.
pub fn regime_reported(regime: Regime, family: FamilyTag, d: usize) -> bool {
    match (regime, family) {
        (Regime::Cubic, FamilyTag::StudentT) => true,
        (Regime::Cubic, _) => d >= 75,
        _ => true,
    }
}

/// Log-log linear interpolation of mean errors in `n`, or extrapolation
/// from the two closest support points.
pub fn interp_error(points: &[(usize, f64)], n_target: usize) -> Result<f64> {
    let mut pts: Vec<(usize, f64)> = points.to_vec();
    pts.sort_by_key(|p| p.0);
    pts.dedup_by_key(|p| p.0);
    if pts.len() < 2 {
        return Err(Error::Support(format!("need 2 distinct n values, got {}", pts.len())));
    }
    if let Some(&(_, e)) = pts.iter().find(|p| p.0 == n_target) {
        return Ok(e);
    }
    if let Some(&(n, e)) = pts.iter().find(|p| !(p.1 > 0.0 && p.1.is_finite())) {
        return Err(Error::Support(format!("error at n={n} is {e}, need a positive value")));
    }
    let i = match pts.iter().position(|p| p.0 > n_target) {
        Some(0) => 0,
        Some(i) => i - 1,
        None => pts.len() - 2,
    };
    let (n0, e0) = pts[i];
    let (n1, e1) = pts[i + 1];
    let (x0, x1) = ((n0 as f64).ln(), (n1 as f64).ln());
    let slope = (e1.ln() - e0.ln()) / (x1 - x0);
    Ok((e0.ln() + slope * ((n_target as f64).ln() - x0)).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegimeRow {
    pub regime: Regime,
    pub d: usize,
    pub n_target: usize,
    /// `sqrt(n_target / ln d)` times the interpolated mean of
    /// `||theta_hat - theta*||_inf`.
    pub mean_maxnorm_interp: f64,
}

pub const REGIME_HEADER: [&str; 4] = ["regime", "d", "n_target", "mean_maxnorm_interp"];

pub fn regime_csv(rows: &[RegimeRow]) -> Result<String> {
    csv_string(
        &REGIME_HEADER,
        rows.iter().map(|r| {
            vec![
                r.regime.to_string(),
                r.d.to_string(),
                r.n_target.to_string(),
                fmt_f64(r.mean_maxnorm_interp),
            ]
        }),
    )
}

/// Arithmetic mean of the raw max-norm error per (d, n), skipping failed
/// replications.
pub fn mean_errors(rows: &[StudyRow]) -> BTreeMap<usize, Vec<(usize, f64)>> {
    let mut acc: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.maxnorm_stat.is_finite()) {
        let raw = r.maxnorm_stat / maxnorm_stat(1.0, r.n, r.d);
        let e = acc.entry((r.d, r.n)).or_insert((0.0, 0));
        e.0 += raw;
        e.1 += 1;
    }
    let mut out: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for ((d, n), (s, c)) in acc {
        out.entry(d).or_default().push((n, s / c as f64));
    }
    out
}

/// Normalized mean error along every regime for every dimension in a
/// single study's rows. Dimensions with fewer than two sample sizes and
/// unreported cubic points are skipped.
pub fn regime_table(rows: &[StudyRow], regimes: &[Regime]) -> Result<Vec<RegimeRow>> {
    let ids: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.study_id.as_str()).collect();
    if ids.len() > 1 {
        return Err(Error::Config(format!(
            "rows mix {} studies; select one study_id",
            ids.len()
        )));
    }
    let Some(family) = rows.first().map(|r| r.family) else {
        return Ok(vec![]);
    };
    let means = mean_errors(rows);
    let mut out = Vec::new();
    for &regime in regimes {
        for (&d, pts) in &means {
            if !regime_reported(regime, family, d) || pts.len() < 2 {
                continue;
            }
            let n_target = regime_n(regime, family, d)?;
            let e = interp_error(pts, n_target)?;
            out.push(RegimeRow {
                regime,
                d,
                n_target,
                mean_maxnorm_interp: maxnorm_stat(e, n_target, d),
            });
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
struct StudyRecord {
    study_id: String,
    structure: String,
    family: String,
    theta_model: String,
    margins_mode: String,
    trunc: usize,
    d: usize,
    n: usize,
    rep: usize,
    seed: u64,
    maxnorm_stat: f64,
    sum_stat: f64,
    nonconverged: i64,
    wall_ms: u64,
}

/// Reads a study CSV written by [`study_csv`]. Estimates are not part of
/// the CSV, so `theta_hat` is empty.
pub fn read_study_csv(path: &Path) -> Result<Vec<StudyRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if header != STUDY_HEADER {
        return Err(Error::Parse(format!(
            "unexpected study header {header:?}, expected {STUDY_HEADER:?}"
        )));
    }
    r.deserialize::<StudyRecord>()
        .map(|rec| {
            let rec = rec.map_err(csv_err)?;
            Ok(StudyRow {
                study_id: rec.study_id,
                structure: rec.structure.parse()?,
                family: rec.family.parse()?,
                theta_model: rec.theta_model,
                margins_mode: rec.margins_mode.parse()?,
                trunc: rec.trunc,
                d: rec.d,
                n: rec.n,
                rep: rec.rep,
                seed: rec.seed,
                maxnorm_stat: rec.maxnorm_stat,
                sum_stat: rec.sum_stat,
                nonconverged: rec.nonconverged,
                wall_ms: rec.wall_ms,
                theta_hat: vec![],
                error: (rec.nonconverged < 0).then(|| "failed".to_string()),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vinemodel::ThetaModel;

    fn cfg(structure: StructureKind, family: FamilyTag, tm: ThetaModel) -> StudyConfig {
        StudyConfig::new(structure, family, ThetaModelSpec::new(tm))
    }

    #[test]
    fn statistic_arithmetic() {
        assert!((maxnorm_stat(0.1, 400, 10) - 1.318_1).abs() < 1e-4);
        assert!((maxnorm_stat(0.1, 400, 10) - 20.0 / 10f64.ln().sqrt() * 0.1).abs() < 1e-15);
        assert_eq!(sum_stat(0.5, 400, 10), 1.0);
        let (m, s) = error_stats(&[0.6, 0.2, -0.1], &[0.5, 0.25, 0.0], &[0, 1, 2], 400, 10);
        assert!((m - maxnorm_stat(0.1, 400, 10)).abs() < 1e-15);
        assert!((s - sum_stat(-0.05, 400, 10)).abs() < 1e-15);
    }

    #[test]
    fn regime_examples() {
        let g = FamilyTag::Gaussian;
        assert_eq!(regime_n(Regime::Linear, g, 100).unwrap(), 2500);
        assert_eq!(regime_n(Regime::Quadratic, g, 40).unwrap(), 200);
        assert_eq!(regime_n(Regime::Cubic, g, 100).unwrap(), 375);
        assert_eq!(regime_n(Regime::Cubic, FamilyTag::StudentT, 20).unwrap(), 50);
        assert_eq!(regime_n(Regime::Cubic, FamilyTag::StudentT, 40).unwrap(), 320);
        assert_eq!(regime_n(Regime::Quadratic, g, 10).unwrap(), 50);
        assert!(regime_n(Regime::Cubic, g, 50).is_err());
        assert!(!regime_reported(Regime::Cubic, g, 60));
        assert!(regime_reported(Regime::Cubic, g, 75));
    }

    #[test]
    fn interpolation_examples() {
        let pts = [(1000, 0.4), (4000, 0.2)];
        assert!((interp_error(&pts, 2000).unwrap() - 0.4 * 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(interp_error(&pts, 4000).unwrap(), 0.2);
        assert_eq!(interp_error(&pts, 1000).unwrap(), 0.4);
        let flat = [(100, 0.3), (200, 0.3)];
        assert!((interp_error(&flat, 5000).unwrap() - 0.3).abs() < 1e-15);
        assert!((interp_error(&flat, 10).unwrap() - 0.3).abs() < 1e-15);
        assert!(interp_error(&[(100, 0.3)], 200).is_err());
        assert!(interp_error(&[(100, 0.3), (100, 0.2)], 200).is_err());
        // extrapolation uses the two nearest points
        let three = [(100, 1.0), (400, 0.5), (1600, 0.1)];
        let want = (0.5f64.ln() + (0.1f64.ln() - 0.5f64.ln()) / 4f64.ln() * (3200f64 / 400.0).ln()).exp();
        assert!((interp_error(&three, 3200).unwrap() - want).abs() < 1e-12);
        let below = (1.0f64.ln() + (0.5f64.ln() - 1.0f64.ln()) / 4f64.ln() * (50f64 / 100.0).ln()).exp();
        assert!((interp_error(&three, 50).unwrap() - below).abs() < 1e-12);
    }

    #[test]
    fn rep_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for d in [10, 20] {
            for n in [100, 200] {
                for r in 0..50 {
                    assert!(seen.insert(rep_seed(1, d, n, r)));
                }
            }
        }
    }

    #[test]
    fn cell_rerun_is_identical() {
        let mut c = cfg(StructureKind::DVine, FamilyTag::Gaussian, ThetaModel::Harmonic);
        c.d = vec![5];
        c.n = vec![200];
        c.replications = Some(3);
        c.seed = 11;
        let rows = run_study(&c).unwrap();
        assert_eq!(rows.len(), 3);
        let truth = true_model(&c, 5).unwrap();
        let again = run_cell(&c, &truth, 200, 2);
        assert_eq!(again.csv_line(), rows[2].csv_line());
        assert_eq!(rows[2].wall_ms, 0);
        let (m, s) = error_stats(&again.theta_hat, &truth.theta(), &stat_indices(&truth), 200, 5);
        assert_eq!((m.to_bits(), s.to_bits()), (again.maxnorm_stat.to_bits(), again.sum_stat.to_bits()));
    }

    #[test]
    fn failures_become_rows() {
        let mut c = cfg(StructureKind::CVine, FamilyTag::Gaussian, ThetaModel::Geometric);
        c.d = vec![4];
        c.n = vec![10];
        c.replications = Some(1);
        let truth = true_model(&c, 4).unwrap();
        // fewer rows than the minimum pair count
        let row = run_cell(&c, &truth, 5, 0);
        assert!(row.failed());
        assert!(row.maxnorm_stat.is_nan() && row.sum_stat.is_nan());
        assert_eq!(row.nonconverged, -1);
        assert!(row.csv_line().contains("NaN,NaN,-1"));
    }

    #[test]
    fn config_defaults_and_validation() {
        let c: StudyConfig = serde_json::from_str(
            r#"{"structure":"cvine","family":"student-t","theta_model":{"name":"harmonic"},"d":[5],"n":[100]}"#,
        )
        .unwrap();
        assert_eq!(c.replications(), 50);
        assert_eq!(c.margins_mode, MarginsMode::Known);
        assert_eq!(c.nu, 4.0);
        assert_eq!(c.trunc_for(5), 4);
        c.validate().unwrap();
        let mut g = c.clone();
        g.family = FamilyTag::Gaussian;
        assert_eq!(g.replications(), 100);
        g.d = vec![];
        assert!(g.validate().is_err());
        let mut big = c.clone();
        big.family = FamilyTag::Gaussian;
        big.theta_model.scale = 3.0;
        assert!(big.validate().is_err());
        assert!(serde_json::from_str::<StudyConfig>(r#"{"structure":"cvine","bogus":1}"#).is_err());
    }

    #[test]
    fn student_statistics_use_correlations_only() {
        let s = RVineStructure::build_cvine(3).unwrap();
        let m = VineModel::from_theta_model(
            s,
            FamilyTag::StudentT,
            &ThetaModelSpec::new(ThetaModel::Harmonic),
            DEFAULT_NU,
        )
        .unwrap();
        assert_eq!(stat_indices(&m), vec![0, 2, 4]);
    }

    #[test]
    fn csv_roundtrip_and_regimes() {
        let mut c = cfg(StructureKind::DVine, FamilyTag::Gaussian, ThetaModel::Geometric);
        c.d = vec![4, 6];
        c.n = vec![100, 400];
        c.replications = Some(4);
        c.seed = 3;
        let rows = run_study(&c).unwrap();
        assert_eq!(rows.len(), 16);
        let keys: Vec<(usize, usize, usize)> = rows.iter().map(|r| (r.d, r.n, r.rep)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        std::fs::write(&p, study_csv(&rows).unwrap()).unwrap();
        let back = read_study_csv(&p).unwrap();
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.csv_line(), b.csv_line());
        }
        let reg = regime_table(&back, &Regime::ALL).unwrap();
        // cubic is not reported for small d
        assert_eq!(reg.len(), 4);
        let means = mean_errors(&rows);
        let e = interp_error(&means[&4], 100).unwrap();
        assert!((reg[0].mean_maxnorm_interp - maxnorm_stat(e, 100, 4)).abs() < 1e-12);
        std::fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(read_study_csv(&p).is_err());
    }

    #[test]
    fn zero_model_sum_stat_is_centered() {
        let mut c = cfg(StructureKind::CVine, FamilyTag::Gaussian, ThetaModel::Zero);
        c.d = vec![6];
        c.n = vec![300];
        c.replications = Some(60);
        c.seed = 5;
        let s: Vec<f64> = run_study(&c).unwrap().iter().map(|r| r.sum_stat).collect();
        let m = s.iter().sum::<f64>() / s.len() as f64;
        let v = s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (s.len() - 1) as f64;
        assert!(m.abs() < 4.0 * (v / s.len() as f64).sqrt(), "mean {m}, var {v}");
    }
}
