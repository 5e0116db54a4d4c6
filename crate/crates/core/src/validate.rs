//! Monte-Carlo checks of the curvature condition and of the `M_n`, `D_n`
//! bounds on the Jacobian of the estimating function.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffvine::jacobian_sparse;
use crate::error::{Error, Result};
use crate::io::{csv_string, fmt_f64};
use crate::seed::mix;
use crate::vinemodel::{SampleMatrix, VineModel};

const ROW_CHUNK: usize = 256;

/// Per-tree scaling of the perturbations, `alpha(t)` for 1-based tree `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AlphaSeq {
    Constant(f64),
    /// `alpha(t) = t`.
    Linear,
    /// Table indexed by tree; trees past the end reuse the last value.
    Custom(Vec<f64>),
}

impl Default for AlphaSeq {
    fn default() -> Self {
        AlphaSeq::Constant(1.0)
    }
}

impl AlphaSeq {
    /// `alpha(t) = sum_{s <= t} s^(-exponent)` tabulated for `trees` trees.
    pub fn power_sum(exponent: f64, trees: usize) -> Self {
        let mut acc = 0.0;
        AlphaSeq::Custom(
            (1..=trees.max(1))
                .map(|s| {
                    acc += (s as f64).powf(-exponent);
                    acc
                })
                .collect(),
        )
    }

    pub fn rule(&self) -> &'static str {
        match self {
            AlphaSeq::Constant(_) => "constant",
            AlphaSeq::Linear => "linear",
            AlphaSeq::Custom(_) => "custom",
        }
    }

    pub fn value(&self, t: usize) -> f64 {
        match self {
            AlphaSeq::Constant(c) => *c,
            AlphaSeq::Linear => t as f64,
            AlphaSeq::Custom(v) => v[t.clamp(1, v.len()) - 1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x > 0.0;
        let good = match self {
            AlphaSeq::Constant(c) => ok(*c),
            AlphaSeq::Linear => true,
            AlphaSeq::Custom(v) => !v.is_empty() && v.iter().all(|&x| ok(x)),
        };
        if good {
            Ok(())
        } else {
            Err(Error::Config(format!("alpha values must be positive and finite: {self}")))
        }
    }
}

impl fmt::Display for AlphaSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlphaSeq::Constant(c) if *c == 1.0 => f.write_str("constant"),
            AlphaSeq::Constant(c) => write!(f, "constant:{c}"),
            AlphaSeq::Linear => f.write_str("linear"),
            AlphaSeq::Custom(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "custom:{}", parts.join(","))
            }
        }
    }
}

impl FromStr for AlphaSeq {
    type Err = Error;

    /// `constant`, `constant:<c>`, `linear`, `custom:<a1>,<a2>,...`.
    fn from_str(s: &str) -> Result<Self> {
        let (rule, arg) = match s.split_once(':') {
            Some((r, a)) => (r.trim(), Some(a)),
            None => (s.trim(), None),
        };
        let num = |x: &str| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad alpha value `{x}`")))
        };
        let a = match (rule.to_ascii_lowercase().as_str(), arg) {
            ("constant", None) => AlphaSeq::Constant(1.0),
            ("constant", Some(c)) => AlphaSeq::Constant(num(c)?),
            ("linear", None) => AlphaSeq::Linear,
            ("custom", Some(list)) => AlphaSeq::Custom(list.split(',').map(num).collect::<Result<_>>()?),
            _ => return Err(Error::Parse(format!("unknown alpha rule `{s}`"))),
        };
        a.validate()?;
        Ok(a)
    }
}

impl TryFrom<String> for AlphaSeq {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AlphaSeq> for String {
    fn from(a: AlphaSeq) -> String {
        a.to_string()
    }
}

/// One perturbation of the parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaDraw {
    pub delta: Vec<f64>,
}

fn param_alphas(model: &VineModel, alpha: &AlphaSeq) -> Vec<f64> {
    model.param_trees().iter().map(|&t| alpha.value(t)).collect()
}

/// `K` perturbations with entries `+-eps * alpha(t(j))`, signs fair coins.
pub fn sample_deltas(model: &VineModel, eps: f64, alpha: &AlphaSeq, k: usize, seed: u64) -> Result<Vec<DeltaDraw>> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    alpha.validate()?;
    let mags: Vec<f64> = param_alphas(model, alpha).iter().map(|a| eps * a).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..k)
        .map(|_| DeltaDraw {
            delta: mags
                .iter()
                .map(|&m| if rng.random::<bool>() { m } else { -m })
                .collect(),
        })
        .collect())
}

/// `ceil(2000 ln d)`.
pub fn default_n_a3(d: usize) -> usize {
    (2000.0 * (d as f64).ln()).ceil() as usize
}

/// `ceil(200 ln d)`.
pub fn default_n_mn(d: usize) -> usize {
    (200.0 * (d as f64).ln()).ceil() as usize
}

fn sample_seed(seed: u64) -> u64 {
    mix(&[seed, 0])
}

fn delta_seed(seed: u64) -> u64 {
    mix(&[seed, 1])
}

fn shifted(model: &VineModel, delta: &[f64]) -> Result<VineModel> {
    let theta: Vec<f64> = model.theta().iter().zip(delta).map(|(t, d)| t + d).collect();
    model.with_theta(&theta)
}

/// `out[k][j] = (1 / Delta_kj) * mean_i [phi(U_i; theta + Delta_k)_j - phi(U_i; theta)_j]`.
pub fn a3_components(model: &VineModel, draws: &[DeltaDraw], u: &SampleMatrix) -> Result<Vec<Vec<f64>>> {
    let n = u.nrows() as f64;
    let base = model.phi_columns(u)?;
    draws
        .iter()
        .map(|dr| {
            let cols = shifted(model, &dr.delta)?.phi_columns(u)?;
            Ok(cols
                .par_iter()
                .zip(&base)
                .zip(&dr.delta)
                .map(|((c, b), &dj)| c.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / n / dj)
                .collect())
        })
        .collect()
}

/// Curvature statistic: the largest signed, scaled change of the mean
/// score over all coordinates and all `K` perturbations.
pub fn estimate_a3(model: &VineModel, eps: f64, alpha: &AlphaSeq, k: usize, n: usize, seed: u64) -> Result<f64> {
    if n < 100 {
        return Err(Error::Config(format!("N must be at least 100, got {n}")));
    }
    let draws = sample_deltas(model, eps, alpha, k, delta_seed(seed))?;
    let u = model.simulate(n, sample_seed(seed))?;
    Ok(a3_components(model, &draws, &u)?
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Quantile level used for `D_n`; `None` means the sample maximum.
pub fn dn_level(p: usize) -> Option<f64> {
    let p2 = (p * p) as f64;
    if p2 <= 15.0 {
        None
    } else {
        Some(1.0 - 15.0 / p2)
    }
}

/// Type-7 (linear interpolation) sample quantile. `q` is clamped to [0, 1].
pub fn quantile_type7(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    sorted_quantile(&v, q)
}

fn sorted_quantile(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

#[derive(Clone, Debug, PartialEq)]
pub struct MnDn {
    pub mn2: f64,
    pub dn: f64,
    /// Quantile level actually used for `dn`.
    pub level: f64,
}

/// Row sums `sum_{k<=j} |alpha_k / alpha_j * d phi_j / d theta_k|` for
/// every `j`, at one observation.
fn row_sums(model: &VineModel, alphas: &[f64], row: &[f64]) -> Result<Vec<f64>> {
    Ok(jacobian_sparse(model, row)?
        .iter()
        .enumerate()
        .map(|(j, g)| {
            g.0.iter()
                .filter(|&&(k, _)| k <= j)
                .map(|&(k, x)| (alphas[k] / alphas[j] * x).abs())
                .sum()
        })
        .collect())
}

/// `M_n^2` and `D_n` estimates sharing one sample and one set of
/// perturbations. `level` overrides the default `1 - 15/p^2`.
pub fn estimate_mn_dn(
    model: &VineModel,
    eps: f64,
    alpha: &AlphaSeq,
    k: usize,
    n: usize,
    seed: u64,
    level: Option<f64>,
) -> Result<MnDn> {
    if n < 2 {
        return Err(Error::Config(format!("N must be at least 2, got {n}")));
    }
    let draws = sample_deltas(model, eps, alpha, k, delta_seed(seed))?;
    let u = model.simulate(n, sample_seed(seed))?;
    let alphas = param_alphas(model, alpha);
    let p = alphas.len();
    let mut row_max = vec![f64::NEG_INFINITY; n];
    let mut mn2 = f64::NEG_INFINITY;
    for dr in &draws {
        let m = shifted(model, &dr.delta)?;
        let chunks: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..n.div_ceil(ROW_CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut sq = vec![0.0; p];
                let mut mx = Vec::with_capacity(ROW_CHUNK);
                for i in c * ROW_CHUNK..((c + 1) * ROW_CHUNK).min(n) {
                    let s = row_sums(&m, &alphas, &u.row(i))?;
                    for (a, x) in sq.iter_mut().zip(&s) {
                        *a += x * x;
                    }
                    mx.push(s.iter().copied().fold(f64::NEG_INFINITY, f64::max));
                }
                Ok((sq, mx))
            })
            .collect();
        let mut sq = vec![0.0; p];
        let mut i = 0;
        for c in chunks {
            let (a, mx) = c?;
            for (s, x) in sq.iter_mut().zip(&a) {
                *s += x;
            }
            for x in mx {
                row_max[i] = row_max[i].max(x);
                i += 1;
            }
        }
        mn2 = sq.iter().map(|s| s / n as f64).fold(mn2, f64::max);
    }
    let level = match level {
        Some(q) => q,
        None => dn_level(p).unwrap_or(1.0),
    };
    Ok(MnDn {
        mn2,
        dn: quantile_type7(&row_max, level),
        level,
    })
}

pub fn estimate_mn(model: &VineModel, eps: f64, alpha: &AlphaSeq, k: usize, n: usize, seed: u64) -> Result<f64> {
    Ok(estimate_mn_dn(model, eps, alpha, k, n, seed, None)?.mn2)
}

pub fn estimate_dn(model: &VineModel, eps: f64, alpha: &AlphaSeq, k: usize, n: usize, seed: u64) -> Result<f64> {
    Ok(estimate_mn_dn(model, eps, alpha, k, n, seed, None)?.dn)
}

/// One line of the validation output.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidationRow {
    pub d: usize,
    pub p: usize,
    pub theta_model: String,
    pub alpha_rule: String,
    pub eps: f64,
    pub k: usize,
    pub n: usize,
    pub seed: u64,
    pub a3_hat: Option<f64>,
    pub mn2_hat: Option<f64>,
    pub dn_hat: Option<f64>,
}

pub const VALIDATION_HEADER: [&str; 11] = [
    "d",
    "p",
    "theta_model",
    "alpha_rule",
    "eps",
    "K",
    "N",
    "seed",
    "a3_hat",
    "mn2_hat",
    "dn_hat",
];

impl ValidationRow {
    pub fn fields(&self) -> Vec<String> {
        let opt = |x: Option<f64>| fmt_f64(x.unwrap_or(f64::NAN));
        vec![
            self.d.to_string(),
            self.p.to_string(),
            self.theta_model.clone(),
            self.alpha_rule.clone(),
            fmt_f64(self.eps),
            self.k.to_string(),
            self.n.to_string(),
            self.seed.to_string(),
            opt(self.a3_hat),
            opt(self.mn2_hat),
            opt(self.dn_hat),
        ]
    }
}

pub fn validation_csv(rows: &[ValidationRow]) -> Result<String> {
    csv_string(&VALIDATION_HEADER, rows.iter().map(ValidationRow::fields))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffvine::mean_jacobian_analytic;
    use crate::paircop::FamilyTag;
    use crate::vinemodel::{ThetaModel, ThetaModelSpec, DEFAULT_NU};
    use crate::vinestruct::RVineStructure;
    use rand_distr::StandardNormal;

    fn gauss(kind: &str, d: usize, tm: ThetaModel) -> VineModel {
        let s = match kind {
            "c" => RVineStructure::build_cvine(d),
            _ => RVineStructure::build_dvine(d),
        }
        .unwrap();
        VineModel::from_theta_model(s, FamilyTag::Gaussian, &ThetaModelSpec::new(tm), DEFAULT_NU).unwrap()
    }

    fn pair(rho: f64) -> VineModel {
        let s = RVineStructure::build_dvine(2).unwrap();
        VineModel::new(s, vec![crate::PairCopula::new(FamilyTag::Gaussian, &[rho]).unwrap()]).unwrap()
    }

    #[test]
    fn alpha_parsing_and_values() {
        assert_eq!("constant".parse::<AlphaSeq>().unwrap(), AlphaSeq::Constant(1.0));
        assert_eq!("linear".parse::<AlphaSeq>().unwrap().value(3), 3.0);
        let c: AlphaSeq = "custom:1,1.5,2".parse().unwrap();
        assert_eq!((c.value(1), c.value(2), c.value(7)), (1.0, 1.5, 2.0));
        assert!("custom:1,0".parse::<AlphaSeq>().is_err());
        assert!("constant:-1".parse::<AlphaSeq>().is_err());
        assert!("cubic".parse::<AlphaSeq>().is_err());
        let back: AlphaSeq = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let ps = AlphaSeq::power_sum(1.1, 3);
        assert!((ps.value(2) - (1.0 + 2f64.powf(-1.1))).abs() < 1e-15);
        assert!(ps.value(3) > ps.value(2));
    }

    #[test]
    fn delta_magnitudes() {
        let m = gauss("c", 6, ThetaModel::Geometric);
        for dr in sample_deltas(&m, 0.005, &AlphaSeq::Constant(1.0), 20, 3).unwrap() {
            assert!(dr.delta.iter().all(|x| x.abs() == 0.005));
        }
        let trees = m.param_trees();
        for dr in sample_deltas(&m, 1e-7, &AlphaSeq::Linear, 20, 3).unwrap() {
            for (x, &t) in dr.delta.iter().zip(&trees) {
                assert_eq!(x.abs(), 1e-7 * t as f64);
                if t == 3 {
                    assert!((x.abs() - 3e-7).abs() < 1e-22);
                }
            }
        }
        assert!(sample_deltas(&m, 0.0, &AlphaSeq::Linear, 1, 0).is_err());
        assert!(sample_deltas(&m, 0.1, &AlphaSeq::Linear, 0, 0).is_err());
    }

    #[test]
    fn delta_signs_are_fair() {
        let m = gauss("d", 4, ThetaModel::Zero);
        let k = 10_000;
        let draws = sample_deltas(&m, 0.01, &AlphaSeq::Constant(1.0), k, 11).unwrap();
        let se = (0.25 / k as f64).sqrt();
        for j in 0..m.param_count() {
            let pos = draws.iter().filter(|d| d.delta[j] > 0.0).count() as f64 / k as f64;
            assert!((pos - 0.5).abs() < 4.0 * se, "coordinate {j}: {pos}");
        }
    }

    #[test]
    fn a3_at_independence_is_near_minus_one() {
        let m = gauss("c", 4, ThetaModel::Zero);
        let v = estimate_a3(&m, 0.005, &AlphaSeq::Constant(1.0), 10, 20_000, 5).unwrap();
        assert!((v + 1.0).abs() < 0.1, "{v}");
    }

    #[test]
    fn a3_bivariate_matches_closed_form_slope() {
        let rho = 0.5;
        let v = estimate_a3(&pair(rho), 0.005, &AlphaSeq::Constant(1.0), 1, 200_000, 9).unwrap();
        let want = -(1.0 + rho * rho) / (1.0 - rho * rho).powi(2);
        assert!((v - want).abs() < 0.06, "{v} vs {want}");
    }

    #[test]
    fn a3_components_match_directional_derivative() {
        let m = gauss("d", 4, ThetaModel::Harmonic);
        let draws = sample_deltas(&m, 1e-4, &AlphaSeq::Constant(1.0), 3, 2).unwrap();
        let u = m.simulate(20_000, 8).unwrap();
        let comp = a3_components(&m, &draws, &u).unwrap();
        let (jhat, _) = mean_jacobian_analytic(&m, &u).unwrap();
        for (dr, c) in draws.iter().zip(&comp) {
            let dv = nalgebra::DVector::from_column_slice(&dr.delta);
            let lin = &jhat * dv;
            for j in 0..c.len() {
                let want = lin[j] / dr.delta[j];
                assert!((c[j] - want).abs() < 1e-2, "j={j}: {} vs {want}", c[j]);
            }
        }
    }

    #[test]
    fn a3_is_deterministic() {
        let m = gauss("c", 5, ThetaModel::Geometric);
        let a = estimate_a3(&m, 0.005, &AlphaSeq::Constant(1.0), 4, 500, 77).unwrap();
        let b = estimate_a3(&m, 0.005, &AlphaSeq::Constant(1.0), 4, 500, 77).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(estimate_a3(&m, 0.005, &AlphaSeq::Constant(1.0), 4, 50, 77).is_err());
    }

    #[test]
    fn mn_bivariate_is_mean_squared_slope() {
        let m = pair(0.3);
        let r = estimate_mn_dn(&m, 1e-9, &AlphaSeq::Constant(1.0), 2, 5000, 4, None).unwrap();
        assert!(r.mn2.is_finite() && r.mn2 > 0.0);
        let u = m.simulate(5000, sample_seed(4)).unwrap();
        let brute: f64 = (0..u.nrows())
            .map(|i| jacobian_sparse(&m, &u.row(i)).unwrap()[0].0[0].1.powi(2))
            .sum::<f64>()
            / 5000.0;
        assert!((r.mn2 - brute).abs() < 1e-6 * brute, "{} vs {brute}", r.mn2);
        // p^2 <= 15: sample maximum
        assert_eq!(r.level, 1.0);
    }

    #[test]
    fn mn_is_stable_in_n() {
        let m = gauss("d", 10, ThetaModel::Zero);
        let a = estimate_mn(&m, 0.005, &AlphaSeq::Constant(1.0), 5, 4000, 1).unwrap();
        let b = estimate_mn(&m, 0.005, &AlphaSeq::Constant(1.0), 5, 8000, 1).unwrap();
        assert!(a.is_finite() && b.is_finite());
        assert!((a - b).abs() < 0.25 * a, "{a} vs {b}");
    }

    #[test]
    fn mn_ratio_invariance_under_alpha_scaling() {
        let m = gauss("c", 5, ThetaModel::Harmonic);
        let a = estimate_mn_dn(&m, 0.004, &AlphaSeq::Linear, 3, 300, 6, None).unwrap();
        let scaled = AlphaSeq::Custom((1..=4).map(|t| 2.0 * t as f64).collect());
        let b = estimate_mn_dn(&m, 0.002, &scaled, 3, 300, 6, None).unwrap();
        assert!((a.mn2 - b.mn2).abs() <= 1e-12 * a.mn2);
        assert!((a.dn - b.dn).abs() <= 1e-12 * a.dn);
    }

    #[test]
    fn mn_rejects_non_gaussian() {
        let s = RVineStructure::build_cvine(3).unwrap();
        let m = VineModel::from_theta_model(
            s,
            FamilyTag::GumbelSigned,
            &ThetaModelSpec::new(ThetaModel::Harmonic),
            DEFAULT_NU,
        )
        .unwrap();
        assert!(matches!(
            estimate_mn(&m, 0.005, &AlphaSeq::Constant(1.0), 2, 200, 1),
            Err(Error::FamilyMismatch { .. })
        ));
    }

    #[test]
    fn dn_bivariate_matches_brute_force_quantile() {
        let m = pair(0.0);
        let r = estimate_mn_dn(&m, 1e-9, &AlphaSeq::Constant(1.0), 1, 100_000, 12, Some(0.9)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let brute: Vec<f64> = (0..1_000_000)
            .map(|_| {
                let x: f64 = rng.sample(StandardNormal);
                let y: f64 = rng.sample(StandardNormal);
                (1.0 - x * x - y * y).abs()
            })
            .collect();
        let want = quantile_type7(&brute, 0.9);
        assert!((r.dn - want).abs() < 0.02 * want, "{} vs {want}", r.dn);
    }

    #[test]
    fn dn_is_monotone_in_level() {
        let m = gauss("c", 5, ThetaModel::Geometric);
        let mut last = f64::NEG_INFINITY;
        for q in [0.5, 0.8, 0.9, 0.99, 1.0] {
            let r = estimate_mn_dn(&m, 0.005, &AlphaSeq::Constant(1.0), 3, 400, 2, Some(q)).unwrap();
            assert!(r.dn >= last);
            last = r.dn;
        }
    }

    #[test]
    fn dn_default_level() {
        assert_eq!(dn_level(1), None);
        assert_eq!(dn_level(3), None);
        assert_eq!(dn_level(4), Some(1.0 - 15.0 / 16.0));
        assert_eq!(dn_level(10), Some(0.85));
    }

    #[test]
    fn type7_quantile() {
        let x = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile_type7(&x, 0.0), 1.0);
        assert_eq!(quantile_type7(&x, 1.0), 4.0);
        assert_eq!(quantile_type7(&x, 0.5), 2.5);
        assert!((quantile_type7(&x, 0.9) - 3.7).abs() < 1e-12);
    }

    #[test]
    fn validation_csv_layout() {
        let row = ValidationRow {
            d: 10,
            p: 45,
            theta_model: "geometric".into(),
            alpha_rule: "constant".into(),
            eps: 0.005,
            k: 50,
            n: 4606,
            seed: 7,
            a3_hat: Some(-0.5),
            mn2_hat: None,
            dn_hat: None,
        };
        let s = validation_csv(&[row]).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next().unwrap(), "d,p,theta_model,alpha_rule,eps,K,N,seed,a3_hat,mn2_hat,dn_hat");
        let f: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(f.len(), 11);
        assert_eq!(f[8].parse::<f64>().unwrap(), -0.5);
        assert_eq!(f[9], "NaN");
    }
}
