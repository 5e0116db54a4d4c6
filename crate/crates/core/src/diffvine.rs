//! Derivatives of the stacked score vector with respect to the parameters.
//!
//! For Gaussian vines every pseudo-observation is carried on the normal
//! scale together with its gradient over the parameters it depends on, so
//! the Jacobian of `phi` at one observation is exact.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paircop::{clamp_unit, gaussian, PairCopula};
use crate::special::norm_quantile;
use crate::vinemodel::{SampleMatrix, VineModel};
use crate::vinestruct::EdgeInput;

/// Absolute step of the finite-difference Jacobian.
pub const FD_STEP: f64 = 1e-5;

const ROW_CHUNK: usize = 256;

/// Sparse gradient: `(parameter index, value)` sorted by index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseGrad(pub Vec<(usize, f64)>);

impl SparseGrad {
    /// `ca * a + cb * b`.
    fn combine(a: &SparseGrad, ca: f64, b: &SparseGrad, cb: f64) -> SparseGrad {
        let (x, y) = (&a.0, &b.0);
        let mut out = Vec::with_capacity(x.len() + y.len() + 1);
        let (mut i, mut j) = (0, 0);
        while i < x.len() || j < y.len() {
            if j == y.len() || (i < x.len() && x[i].0 < y[j].0) {
                out.push((x[i].0, ca * x[i].1));
                i += 1;
            } else if i == x.len() || y[j].0 < x[i].0 {
                out.push((y[j].0, cb * y[j].1));
                j += 1;
            } else {
                out.push((x[i].0, ca * x[i].1 + cb * y[j].1));
                i += 1;
                j += 1;
            }
        }
        SparseGrad(out)
    }

    pub fn to_dense(&self, p: usize) -> Vec<f64> {
        let mut v = vec![0.0; p];
        for &(k, x) in &self.0 {
            v[k] = x;
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhiJacobianRow {
    pub j: usize,
    /// `d phi_j / d theta_k` for every `k`.
    pub entries: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JacobianMethod {
    Analytic,
    Fd,
}

impl std::str::FromStr for JacobianMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "analytic" => Ok(JacobianMethod::Analytic),
            "fd" => Ok(JacobianMethod::Fd),
            other => Err(Error::Parse(format!("unknown jacobian method `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalIJ {
    /// Sample covariance of `phi`.
    pub i_hat: DMatrix<f64>,
    /// Sample mean of the Jacobian of `phi`.
    pub j_hat: DMatrix<f64>,
    pub n: usize,
    pub seed: u64,
    pub theta: Vec<f64>,
    pub method: JacobianMethod,
}

#[derive(Serialize, Deserialize)]
struct IjSidecar {
    #[serde(rename = "N")]
    n: usize,
    seed: u64,
    theta: Vec<f64>,
    method: JacobianMethod,
}

fn gaussian_rhos(model: &VineModel) -> Result<Vec<f64>> {
    model
        .copulas
        .iter()
        .map(|c| match *c {
            PairCopula::Gaussian { rho } => Ok(rho),
            other => Err(Error::FamilyMismatch {
                expected: "gaussian",
                found: other.family().name(),
            }),
        })
        .collect()
}

struct Carried {
    z: f64,
    grad: SparseGrad,
}

/// Sparse Jacobian of `phi` at one observation of a Gaussian vine: entry
/// `j` holds the nonzero `d phi_j / d theta_k`.
pub fn jacobian_sparse(model: &VineModel, row: &[f64]) -> Result<Vec<SparseGrad>> {
    let rhos = gaussian_rhos(model)?;
    jacobian_sparse_with(model, &rhos, row)
}

fn jacobian_sparse_with(model: &VineModel, rhos: &[f64], row: &[f64]) -> Result<Vec<SparseGrad>> {
    if row.len() != model.d() {
        return Err(Error::Dimension(format!("row has {} entries, model has {}", row.len(), model.d())));
    }
    if let Some(&x) = row.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::Domain(x));
    }
    let raw: Vec<f64> = row.iter().map(|&u| norm_quantile(clamp_unit(u))).collect();
    let s = &model.structure;
    let mut out = Vec::with_capacity(rhos.len());
    let mut prev: Vec<[Carried; 2]> = Vec::new();
    let mut g = 0;
    for (ti, tree) in s.trees.iter().enumerate() {
        let last = ti + 1 == s.trunc;
        let mut cur: Vec<[Carried; 2]> = Vec::with_capacity(if last { 0 } else { tree.len() });
        for e in tree {
            let fetch = |inp: EdgeInput| -> (f64, &SparseGrad) {
                static EMPTY: SparseGrad = SparseGrad(Vec::new());
                match inp {
                    EdgeInput::Raw(v) => (raw[v], &EMPTY),
                    EdgeInput::Parent { index, side } => {
                        let c = &prev[index][side as usize];
                        (c.z, &c.grad)
                    }
                }
            };
            let (xa, ga) = fetch(e.input_a);
            let (xb, gb) = fetch(e.input_b);
            let rho = rhos[g];
            let p = gaussian::partials(xa, xb, rho);
            let mut phi_grad = SparseGrad::combine(ga, p.ds_dx1, gb, p.ds_dx2);
            phi_grad.0.push((g, p.ds_drho));
            out.push(phi_grad);
            if !last {
                // Output for a given b, then b given a (arguments swapped).
                let q = gaussian::partials(xb, xa, rho);
                let mut g1 = SparseGrad::combine(ga, p.dh_dx1, gb, p.dh_dx2);
                g1.0.push((g, p.dh_drho));
                let mut g2 = SparseGrad::combine(gb, q.dh_dx1, ga, q.dh_dx2);
                g2.0.push((g, q.dh_drho));
                cur.push([
                    Carried {
                        z: gaussian::h_scores(xa, xb, rho),
                        grad: g1,
                    },
                    Carried {
                        z: gaussian::h_scores(xb, xa, rho),
                        grad: g2,
                    },
                ]);
            }
            g += 1;
        }
        prev = cur;
    }
    Ok(out)
}

/// Dense Jacobian rows of `phi` at one observation (Gaussian vines).
pub fn grad_phi_analytic(model: &VineModel, row: &[f64]) -> Result<Vec<PhiJacobianRow>> {
    let p = model.param_count();
    Ok(jacobian_sparse(model, row)?
        .iter()
        .enumerate()
        .map(|(j, g)| PhiJacobianRow {
            j,
            entries: g.to_dense(p),
        })
        .collect())
}

/// Central finite differences of `phi` in every parameter.
pub fn grad_phi_fd(model: &VineModel, row: &[f64], step: f64) -> Result<Vec<PhiJacobianRow>> {
    let m = SampleMatrix::from_rows(&[row.to_vec()])?;
    let cols = fd_jacobian_columns(model, &m, step)?;
    let p = model.param_count();
    Ok((0..p)
        .map(|j| PhiJacobianRow {
            j,
            entries: (0..p).map(|k| cols[k][j][0]).collect(),
        })
        .collect())
}

/// `out[k][j][i]`: finite-difference derivative of `phi_j` in `theta_k` at
/// row `i`.
pub fn fd_jacobian_columns(model: &VineModel, u: &SampleMatrix, step: f64) -> Result<Vec<Vec<Vec<f64>>>> {
    let theta = model.theta();
    (0..theta.len())
        .map(|k| {
            let mut t = theta.clone();
            t[k] += step;
            let up = model.with_theta_unchecked(&t)?.phi_columns(u)?;
            t[k] -= 2.0 * step;
            let dn = model.with_theta_unchecked(&t)?.phi_columns(u)?;
            Ok(up
                .iter()
                .zip(&dn)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) / (2.0 * step)).collect())
                .collect())
        })
        .collect()
}

/// Sample mean of the analytic Jacobian over the rows of `u`, with the
/// standard error of each entry.
pub fn mean_jacobian_analytic(model: &VineModel, u: &SampleMatrix) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let rhos = gaussian_rhos(model)?;
    let p = rhos.len();
    let n = u.nrows();
    let chunks: Vec<Result<(DMatrix<f64>, DMatrix<f64>)>> = (0..n.div_ceil(ROW_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut s1 = DMatrix::zeros(p, p);
            let mut s2 = DMatrix::zeros(p, p);
            for i in c * ROW_CHUNK..((c + 1) * ROW_CHUNK).min(n) {
                for (j, g) in jacobian_sparse_with(model, &rhos, &u.row(i))?.iter().enumerate() {
                    for &(k, x) in &g.0 {
                        s1[(j, k)] += x;
                        s2[(j, k)] += x * x;
                    }
                }
            }
            Ok((s1, s2))
        })
        .collect();
    let mut s1 = DMatrix::zeros(p, p);
    let mut s2 = DMatrix::zeros(p, p);
    for c in chunks {
        let (a, b) = c?;
        s1 += a;
        s2 += b;
    }
    let nf = n as f64;
    let mean = &s1 / nf;
    let se = DMatrix::from_fn(p, p, |j, k| {
        let m = mean[(j, k)];
        let var = ((s2[(j, k)] - nf * m * m) / (nf - 1.0)).max(0.0);
        (var / nf).sqrt()
    });
    Ok((mean, se))
}

/// Monte-Carlo estimates of `I = Cov[phi]` and `J = E[d phi / d theta]` at
/// the model's parameters from `n` simulated rows.
pub fn empirical_ij(model: &VineModel, n: usize, seed: u64, method: JacobianMethod) -> Result<EmpiricalIJ> {
    if n < 100 {
        return Err(Error::Support(format!("need at least 100 rows, got {n}")));
    }
    let u = model.simulate(n, seed)?;
    let cols = model.phi_columns(&u)?;
    let p = cols.len();
    let nf = n as f64;
    let means: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    let i_hat = DMatrix::from_fn(p, p, |a, b| {
        cols[a]
            .iter()
            .zip(&cols[b])
            .map(|(x, y)| (x - means[a]) * (y - means[b]))
            .sum::<f64>()
            / (nf - 1.0)
    });
    let j_hat = match method {
        JacobianMethod::Analytic => mean_jacobian_analytic(model, &u)?.0,
        JacobianMethod::Fd => {
            let fd = fd_jacobian_columns(model, &u, FD_STEP)?;
            DMatrix::from_fn(p, p, |j, k| fd[k][j].iter().sum::<f64>() / nf)
        }
    };
    Ok(EmpiricalIJ {
        i_hat,
        j_hat,
        n,
        seed,
        theta: model.theta(),
        method,
    })
}

fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:.16e}", m[(r, c)])).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

impl EmpiricalIJ {
    /// Writes `<prefix>_I.csv`, `<prefix>_J.csv` and `<prefix>.json`.
    pub fn write(&self, prefix: &Path) -> Result<()> {
        let with = |suffix: &str| {
            let mut s = prefix.as_os_str().to_owned();
            s.push(suffix);
            std::path::PathBuf::from(s)
        };
        std::fs::write(with("_I.csv"), matrix_csv(&self.i_hat))?;
        std::fs::write(with("_J.csv"), matrix_csv(&self.j_hat))?;
        let side = IjSidecar {
            n: self.n,
            seed: self.seed,
            theta: self.theta.clone(),
            method: self.method,
        };
        std::fs::write(with(".json"), serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }
}
