//! Stepwise maximum likelihood for vine copulas.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{brent_max, nelder_mead};
use crate::paircop::{clamp_unit, FamilyTag, PairCopula, GUMBEL_THETA_MAX, NU_MAX, NU_MIN};
use crate::special::{log_add_exp, norm_quantile};
use crate::vinemodel::{first_tree_inputs, next_tree_inputs, EdgeData, ModelJson, SampleMatrix, Scale, VineModel};
use crate::vinestruct::{RVineStructure, StructureJson};

/// Distance kept from every parameter-domain edge.
pub const DOMAIN_SHRINK: f64 = 1e-6;
pub const SCALAR_TOL: f64 = 1e-9;
pub const SCALAR_MAX_ITER: usize = 500;
pub const SIMPLEX_MAX_ITER: usize = 500;
pub const MIN_PAIRS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginsMode {
    Known,
    Empirical,
}

impl MarginsMode {
    pub fn name(self) -> &'static str {
        match self {
            MarginsMode::Known => "known",
            MarginsMode::Empirical => "empirical",
        }
    }
}

impl FromStr for MarginsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "known" => Ok(MarginsMode::Known),
            "empirical" | "pseudo" => Ok(MarginsMode::Empirical),
            other => Err(Error::Parse(format!("unknown margins mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for MarginsMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeFit {
    pub copula: PairCopula,
    pub iterations: usize,
    pub converged: bool,
    /// Estimate within `2 * DOMAIN_SHRINK` of a domain edge.
    pub at_boundary: bool,
    /// Mean score at the estimate.
    pub mean_score: Vec<f64>,
}

impl EdgeFit {
    pub fn flagged(&self) -> bool {
        !self.converged || self.at_boundary
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EdgeDiagnostics {
    pub tree: usize,
    pub a: usize,
    pub b: usize,
    #[serde(rename = "D")]
    pub cond: Vec<usize>,
    pub family: FamilyTag,
    pub params: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub at_boundary: bool,
    pub mean_score: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub model: VineModel,
    pub margins_mode: MarginsMode,
    pub edges: Vec<EdgeFit>,
}

/// JSON form of a fit; also readable as a [`ModelJson`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitJson {
    pub structure: StructureJson,
    pub families: Vec<FamilyTag>,
    pub theta: Vec<f64>,
    pub margins_mode: MarginsMode,
    pub edges: Vec<EdgeDiagnostics>,
}

impl FitResult {
    pub fn theta_hat(&self) -> Vec<f64> {
        self.model.theta()
    }

    /// Edges not converged or stuck at a domain edge.
    pub fn flagged_count(&self) -> usize {
        self.edges.iter().filter(|e| e.flagged()).count()
    }

    pub fn diagnostics(&self) -> Vec<EdgeDiagnostics> {
        self.model
            .structure
            .edges()
            .zip(&self.edges)
            .map(|(e, f)| EdgeDiagnostics {
                tree: e.tree,
                a: e.a + 1,
                b: e.b + 1,
                cond: e.cond.iter().map(|v| v + 1).collect(),
                family: f.copula.family(),
                params: f.copula.params(),
                iterations: f.iterations,
                converged: f.converged,
                at_boundary: f.at_boundary,
                mean_score: f.mean_score.clone(),
            })
            .collect()
    }

    pub fn to_json(&self) -> FitJson {
        let ModelJson {
            structure,
            families,
            theta,
        } = self.model.to_json();
        FitJson {
            structure,
            families,
            theta,
            margins_mode: self.margins_mode,
            edges: self.diagnostics(),
        }
    }

    /// Flat CSV: one row per edge.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tree,a,b,D,family,param1,param2,converged,at_boundary,iterations\n");
        for d in self.diagnostics() {
            let cond: Vec<String> = d.cond.iter().map(usize::to_string).collect();
            let p = |k: usize| d.params.get(k).map(|x| format!("{x:.16e}")).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                d.tree,
                d.a,
                d.b,
                cond.join(" "),
                d.family,
                p(0),
                p(1),
                d.converged,
                d.at_boundary,
                d.iterations
            ));
        }
        s
    }
}

/// Column-wise ranks divided by `n + 1`, ties getting their average rank.
pub fn pseudo_obs(x: &SampleMatrix) -> Result<SampleMatrix> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::Support(format!("pseudo-observations need n >= 2, got {n}")));
    }
    let cols: Vec<Vec<f64>> = (0..x.ncols())
        .into_par_iter()
        .map(|j| {
            let c = x.col(j);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| c[a].total_cmp(&c[b]));
            let mut out = vec![0.0; n];
            let mut i = 0;
            while i < n {
                let mut k = i;
                while k + 1 < n && c[idx[k + 1]] == c[idx[i]] {
                    k += 1;
                }
                // Ranks i+1..=k+1 share their mean.
                let rank = 0.5 * ((i + 1) + (k + 1)) as f64;
                for &r in &idx[i..=k] {
                    out[r] = rank / (n as f64 + 1.0);
                }
                i = k + 1;
            }
            out
        })
        .collect();
    SampleMatrix::from_columns(cols)
}

fn mean_score(c: &PairCopula, u: &[f64], v: &[f64], scale: Scale) -> Vec<f64> {
    let k = c.family().arity();
    let mut acc = [0.0; 2];
    let mut s = [0.0; 2];
    for (&a, &b) in u.iter().zip(v) {
        scale.score(c, a, b, &mut s);
        acc[0] += s[0];
        acc[1] += s[1];
    }
    acc[..k].iter().map(|x| x / u.len() as f64).collect()
}

/// Maximum likelihood fit of one pair copula.
pub fn fit_edge(family: FamilyTag, u: &[f64], v: &[f64]) -> Result<EdgeFit> {
    if let Some(&x) = u.iter().chain(v).find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::Domain(x));
    }
    let u: Vec<f64> = u.iter().map(|&x| clamp_unit(x)).collect();
    let v: Vec<f64> = v.iter().map(|&x| clamp_unit(x)).collect();
    fit_edge_on(family, &u, &v, Scale::Uniform)
}

/// As [`fit_edge`] with inputs already on `scale` (clamped when uniform).
pub fn fit_edge_on(family: FamilyTag, u: &[f64], v: &[f64], scale: Scale) -> Result<EdgeFit> {
    if u.len() != v.len() {
        return Err(Error::Dimension("pair columns differ in length".into()));
    }
    if u.len() < MIN_PAIRS {
        return Err(Error::Support(format!("{} pairs, need at least {MIN_PAIRS}", u.len())));
    }
    let (copula, iterations, converged, at_boundary) = match (family, scale) {
        (FamilyTag::Independence, _) => (PairCopula::Independence, 0, true, false),
        (FamilyTag::Gaussian, Scale::Normal) => fit_gaussian_scores(u, v),
        (FamilyTag::Gaussian, Scale::Uniform) => {
            let x: Vec<f64> = u.iter().map(|&a| norm_quantile(a)).collect();
            let y: Vec<f64> = v.iter().map(|&b| norm_quantile(b)).collect();
            fit_gaussian_scores(&x, &y)
        }
        (FamilyTag::GumbelSigned, Scale::Uniform) => fit_gumbel(u, v),
        (FamilyTag::StudentT, Scale::Uniform) => fit_student(u, v),
        (f, Scale::Normal) => {
            return Err(Error::FamilyMismatch {
                expected: "gaussian",
                found: f.name(),
            })
        }
    };
    let mean_score = mean_score(&copula, u, v, scale);
    Ok(EdgeFit {
        copula,
        iterations,
        converged,
        at_boundary,
        mean_score,
    })
}

type Fitted = (PairCopula, usize, bool, bool);

fn near(x: f64, edge: f64) -> bool {
    (x - edge).abs() <= 2.0 * DOMAIN_SHRINK
}

fn fit_gaussian_scores(xs: &[f64], ys: &[f64]) -> Fitted {
    let (mut s, mut c) = (0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        s += x * x + y * y;
        c += x * y;
    }
    let n = xs.len() as f64;
    let ll = |r: f64| {
        let om = 1.0 - r * r;
        -0.5 * n * om.ln() - (r * r * s - 2.0 * r * c) / (2.0 * om)
    };
    let lo = -1.0 + DOMAIN_SHRINK;
    let hi = 1.0 - DOMAIN_SHRINK;
    let r = brent_max(ll, lo, hi, SCALAR_TOL, SCALAR_MAX_ITER);
    (
        PairCopula::Gaussian { rho: r.x },
        r.iterations,
        r.converged,
        near(r.x, -1.0) || near(r.x, 1.0),
    )
}

/// Per-pair logs for the Gumbel likelihood on one branch.
struct GumbelTerms {
    l1: Vec<f64>,
    l2: Vec<f64>,
    /// `t1 + t2`, i.e. `-ln u - ln v`.
    tsum: f64,
    lsum: f64,
}

impl GumbelTerms {
    fn new(u: impl Iterator<Item = f64>, v: &[f64]) -> Self {
        let mut l1 = Vec::with_capacity(v.len());
        let mut l2 = Vec::with_capacity(v.len());
        let (mut tsum, mut lsum) = (0.0, 0.0);
        for (a, &b) in u.zip(v) {
            let (t1, t2) = (-a.ln(), -b.ln());
            tsum += t1 + t2;
            l1.push(t1.ln());
            l2.push(t2.ln());
            lsum += t1.ln() + t2.ln();
        }
        GumbelTerms { l1, l2, tsum, lsum }
    }

    fn loglik(&self, delta: f64) -> f64 {
        let mut acc = 0.0;
        for (&l1, &l2) in self.l1.iter().zip(&self.l2) {
            let ln_s = log_add_exp(delta * l1, delta * l2);
            let a = (ln_s / delta).exp();
            acc += -a + (1.0 / delta - 2.0) * ln_s + (a + delta - 1.0).ln();
        }
        acc + self.tsum + (delta - 1.0) * self.lsum
    }
}

fn fit_gumbel(u: &[f64], v: &[f64]) -> Fitted {
    let pos = GumbelTerms::new(u.iter().copied(), v);
    let neg = GumbelTerms::new(u.iter().map(|&a| 1.0 - a), v);
    let hi = GUMBEL_THETA_MAX - DOMAIN_SHRINK;
    let rp = brent_max(|th| pos.loglik(1.0 + th), 0.0, hi, SCALAR_TOL, SCALAR_MAX_ITER);
    let rn = brent_max(|th| neg.loglik(1.0 - th), -hi, 0.0, SCALAR_TOL, SCALAR_MAX_ITER);
    let r = if rn.fx > rp.fx { rn } else { rp };
    (
        PairCopula::GumbelSigned { theta: r.x },
        rp.iterations + rn.iterations,
        rp.converged && rn.converged,
        near(r.x.abs(), GUMBEL_THETA_MAX),
    )
}

fn fit_student(u: &[f64], v: &[f64]) -> Fitted {
    let lo_rho = -1.0 + DOMAIN_SHRINK;
    let hi_rho = 1.0 - DOMAIN_SHRINK;
    let max_lognu = (NU_MAX - NU_MIN).ln();
    let negll = |p: &[f64]| {
        let (rho, lognu) = (p[0], p[1]);
        if !(rho > lo_rho && rho < hi_rho && lognu <= max_lognu && lognu > -30.0) {
            return f64::INFINITY;
        }
        let c = PairCopula::StudentT {
            rho,
            nu: NU_MIN + lognu.exp(),
        };
        -u.iter().zip(v).map(|(&a, &b)| c.ln_pdf(a, b)).sum::<f64>()
    };
    let step = [0.2, 0.5];
    let mut r = nelder_mead(negll, &[0.0, 2f64.ln()], &step, 1e-12, SIMPLEX_MAX_ITER);
    let mut iterations = r.iterations;
    if !r.converged {
        // Restart from the normal-scores correlation.
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (&a, &b) in u.iter().zip(v) {
            let (x, y) = (norm_quantile(a), norm_quantile(b));
            sxy += x * y;
            sxx += x * x;
            syy += y * y;
        }
        let rho0 = (sxy / (sxx * syy).sqrt()).clamp(-0.99, 0.99);
        let r2 = nelder_mead(negll, &[rho0, r.x[1].min(max_lognu - 0.1)], &step, 1e-12, SIMPLEX_MAX_ITER);
        iterations += r2.iterations;
        if r2.converged || r2.fx < r.fx {
            r = r2;
        }
    }
    let nu = NU_MIN + r.x[1].exp();
    (
        PairCopula::StudentT { rho: r.x[0], nu },
        iterations,
        r.converged,
        near(r.x[0], -1.0) || near(r.x[0], 1.0) || nu >= NU_MAX - 2.0 * DOMAIN_SHRINK || nu <= NU_MIN + 2.0 * DOMAIN_SHRINK,
    )
}

/// Fits the edges of one tree given their inputs on `scale`.
pub fn fit_tree(families: &[FamilyTag], inputs: &[EdgeData], scale: Scale) -> Result<Vec<EdgeFit>> {
    families
        .par_iter()
        .zip(inputs)
        .map(|(&f, e)| fit_edge_on(f, &e.u, &e.v, scale))
        .collect()
}

/// Tree-by-tree estimation on copula-scale data `u`. `margins_mode` is a
/// label only; see [`estimate`] for rank transformation.
pub fn stepwise_fit(
    families: &[FamilyTag],
    structure: &RVineStructure,
    u: &SampleMatrix,
    margins_mode: MarginsMode,
) -> Result<FitResult> {
    if families.len() != structure.n_edges() {
        return Err(Error::Dimension(format!(
            "{} families for {} edges",
            families.len(),
            structure.n_edges()
        )));
    }
    if u.ncols() != structure.d {
        return Err(Error::Dimension(format!(
            "data has {} columns, structure has dimension {}",
            u.ncols(),
            structure.d
        )));
    }
    let toff = structure.tree_offsets();
    let mut fits: Vec<EdgeFit> = Vec::with_capacity(structure.n_edges());
    if let Some(&x) = (0..u.ncols()).flat_map(|j| u.col(j)).find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::Domain(x));
    }
    let scale = Scale::for_families(families);
    let mut cur = first_tree_inputs(structure, u, scale);
    for t in 0..structure.trunc {
        let tree_fits = fit_tree(&families[toff[t]..toff[t + 1]], &cur, scale)?;
        if t + 1 < structure.trunc {
            let cops: Vec<PairCopula> = tree_fits.iter().map(|f| f.copula).collect();
            cur = next_tree_inputs(structure, t + 1, &cops, &cur, scale);
        }
        fits.extend(tree_fits);
    }
    let model = VineModel::new(structure.clone(), fits.iter().map(|f| f.copula).collect())?;
    Ok(FitResult {
        model,
        margins_mode,
        edges: fits,
    })
}

/// Stepwise fit on raw data: with known margins `data` must already be on
/// the copula scale; with empirical margins it is rank transformed first.
pub fn estimate(
    families: &[FamilyTag],
    structure: &RVineStructure,
    data: &SampleMatrix,
    margins_mode: MarginsMode,
) -> Result<FitResult> {
    match margins_mode {
        MarginsMode::Known => stepwise_fit(families, structure, data, margins_mode),
        MarginsMode::Empirical => stepwise_fit(families, structure, &pseudo_obs(data)?, margins_mode),
    }
}
