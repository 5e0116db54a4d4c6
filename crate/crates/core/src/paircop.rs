//! Bivariate copula families used as vine building blocks.
//!
//! Gaussian and Student's t copulas are evaluated on normal (resp. t) scores.
//! The signed Gumbel family maps `theta >= 0` to a Gumbel copula with
//! parameter `1 + theta` and `theta < 0` to the 90 degree rotation with
//! parameter `1 - theta`, where the rotation has density `c(1 - u, v)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::special::{log_add_exp, norm_cdf, norm_quantile, t_cdf, t_quantile};

/// Inputs are clamped to `[U_EPS, 1 - U_EPS]` before evaluation.
pub const U_EPS: f64 = 1e-10;
/// Largest admissible `|theta|` for the signed Gumbel family.
pub const GUMBEL_THETA_MAX: f64 = 49.0;
/// Student's t degrees of freedom live in `(NU_MIN, NU_MAX]`.
pub const NU_MIN: f64 = 2.0;
pub const NU_MAX: f64 = 50.0;
/// Relative step for numerical score evaluation.
pub const SCORE_FD_STEP: f64 = 1e-6;

const HINV_MAX_ITER: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyTag {
    Independence,
    Gaussian,
    GumbelSigned,
    StudentT,
}

impl FamilyTag {
    pub const ALL: [FamilyTag; 4] = [
        FamilyTag::Independence,
        FamilyTag::Gaussian,
        FamilyTag::GumbelSigned,
        FamilyTag::StudentT,
    ];

    pub fn arity(self) -> usize {
        match self {
            FamilyTag::Independence => 0,
            FamilyTag::Gaussian | FamilyTag::GumbelSigned => 1,
            FamilyTag::StudentT => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FamilyTag::Independence => "independence",
            FamilyTag::Gaussian => "gaussian",
            FamilyTag::GumbelSigned => "gumbel",
            FamilyTag::StudentT => "student-t",
        }
    }
}

impl fmt::Display for FamilyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FamilyTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "independence" | "indep" => Ok(FamilyTag::Independence),
            "gaussian" | "normal" => Ok(FamilyTag::Gaussian),
            "gumbel" | "gumbel-signed" | "gumbelsigned" => Ok(FamilyTag::GumbelSigned),
            "student-t" | "studentt" | "student" | "t" => Ok(FamilyTag::StudentT),
            other => Err(Error::Parse(format!("unknown copula family `{other}`"))),
        }
    }
}

/// Which conditional distribution an h-function returns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    /// `C(u | v) = dC(u, v) / dv`.
    FirstGivenSecond,
    /// `C(v | u) = dC(u, v) / du`.
    SecondGivenFirst,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PairCopula {
    Independence,
    Gaussian { rho: f64 },
    GumbelSigned { theta: f64 },
    StudentT { rho: f64, nu: f64 },
}

/// Closed-form partial derivatives of the Gaussian pair-copula score and
/// h-function, all in terms of normal scores `x1`, `x2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianPartials {
    pub ds_drho: f64,
    pub ds_dx1: f64,
    pub ds_dx2: f64,
    /// Derivatives of `h(x1, x2; rho) = (x1 - rho x2) / sqrt(1 - rho^2)`.
    pub dh_drho: f64,
    pub dh_dx1: f64,
    pub dh_dx2: f64,
}

#[inline]
pub fn clamp_unit(u: f64) -> f64 {
    u.clamp(U_EPS, 1.0 - U_EPS)
}

/// Probability levels passed to an inverse h-function keep far more of
/// the tails than copula arguments: h-values below `U_EPS` are common for
/// strong dependence, and clamping them would break the round trip.
pub fn clamp_level(w: f64) -> f64 {
    w.clamp(W_EPS, 1.0 - f64::EPSILON / 2.0)
}

const W_EPS: f64 = 1e-300;

fn check_unit(u: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&u) {
        Ok(clamp_unit(u))
    } else {
        Err(Error::Domain(u))
    }
}

impl PairCopula {
    /// Builds a pair copula from a family tag and its parameter slice,
    /// checking the parameter domain.
    pub fn new(family: FamilyTag, params: &[f64]) -> Result<Self> {
        if params.len() != family.arity() {
            return Err(Error::InvalidParameter {
                family: family.name(),
                detail: format!("expected {} parameters, got {}", family.arity(), params.len()),
            });
        }
        let c = match family {
            FamilyTag::Independence => PairCopula::Independence,
            FamilyTag::Gaussian => PairCopula::Gaussian { rho: params[0] },
            FamilyTag::GumbelSigned => PairCopula::GumbelSigned { theta: params[0] },
            FamilyTag::StudentT => PairCopula::StudentT {
                rho: params[0],
                nu: params[1],
            },
        };
        c.validate()?;
        Ok(c)
    }

    /// The copula of `family` at its independence point (`nu` for Student's
    /// t is set to `nu`).
    pub fn independent_member(family: FamilyTag, nu: f64) -> Self {
        match family {
            FamilyTag::Independence => PairCopula::Independence,
            FamilyTag::Gaussian => PairCopula::Gaussian { rho: 0.0 },
            FamilyTag::GumbelSigned => PairCopula::GumbelSigned { theta: 0.0 },
            FamilyTag::StudentT => PairCopula::StudentT { rho: 0.0, nu },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| {
            Err(Error::InvalidParameter {
                family: self.family().name(),
                detail,
            })
        };
        match *self {
            PairCopula::Independence => Ok(()),
            PairCopula::Gaussian { rho } if !(rho > -1.0 && rho < 1.0) => {
                bad(format!("rho = {rho} not in (-1, 1)"))
            }
            PairCopula::GumbelSigned { theta } if !(theta.abs() <= GUMBEL_THETA_MAX) => {
                bad(format!("|theta| = {} exceeds {GUMBEL_THETA_MAX}", theta.abs()))
            }
            PairCopula::StudentT { rho, .. } if !(rho > -1.0 && rho < 1.0) => {
                bad(format!("rho = {rho} not in (-1, 1)"))
            }
            PairCopula::StudentT { nu, .. } if !(nu > NU_MIN && nu <= NU_MAX) => {
                bad(format!("nu = {nu} not in ({NU_MIN}, {NU_MAX}]"))
            }
            _ => Ok(()),
        }
    }

    pub fn family(&self) -> FamilyTag {
        match self {
            PairCopula::Independence => FamilyTag::Independence,
            PairCopula::Gaussian { .. } => FamilyTag::Gaussian,
            PairCopula::GumbelSigned { .. } => FamilyTag::GumbelSigned,
            PairCopula::StudentT { .. } => FamilyTag::StudentT,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            PairCopula::Independence => vec![],
            PairCopula::Gaussian { rho } => vec![rho],
            PairCopula::GumbelSigned { theta } => vec![theta],
            PairCopula::StudentT { rho, nu } => vec![rho, nu],
        }
    }

    /// Same family, new parameters. No domain check.
    pub fn with_params_unchecked(&self, params: &[f64]) -> Self {
        match self {
            PairCopula::Independence => PairCopula::Independence,
            PairCopula::Gaussian { .. } => PairCopula::Gaussian { rho: params[0] },
            PairCopula::GumbelSigned { .. } => PairCopula::GumbelSigned { theta: params[0] },
            PairCopula::StudentT { .. } => PairCopula::StudentT {
                rho: params[0],
                nu: params[1],
            },
        }
    }

    pub fn log_density(&self, u: f64, v: f64) -> Result<f64> {
        Ok(self.ln_pdf(check_unit(u)?, check_unit(v)?))
    }

    pub fn density(&self, u: f64, v: f64) -> Result<f64> {
        self.log_density(u, v).map(f64::exp)
    }

    pub fn hfunc(&self, u: f64, v: f64, side: Side) -> Result<f64> {
        Ok(self.h(check_unit(u)?, check_unit(v)?, side))
    }

    /// Inverse h-function. With `Side::FirstGivenSecond` returns `u` such
    /// that `C(u | cond) = w`; with `Side::SecondGivenFirst` returns `v`
    /// such that `C(v | cond) = w` where `cond` is the first argument.
    pub fn hinv(&self, w: f64, cond: f64, side: Side) -> Result<f64> {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::Domain(w));
        }
        self.h_inv(clamp_level(w), check_unit(cond)?, side)
    }

    /// Gradient of the log density with respect to the parameters.
    pub fn score(&self, u: f64, v: f64) -> Result<Vec<f64>> {
        let (u, v) = (check_unit(u)?, check_unit(v)?);
        let mut out = [0.0; 2];
        self.score_into(u, v, &mut out);
        Ok(out[..self.family().arity()].to_vec())
    }

    pub fn score_partials_gaussian(&self, x1: f64, x2: f64) -> Result<GaussianPartials> {
        match *self {
            PairCopula::Gaussian { rho } => Ok(gaussian::partials(x1, x2, rho)),
            other => Err(Error::FamilyMismatch {
                expected: "gaussian",
                found: other.family().name(),
            }),
        }
    }

    /// True for families whose kernels also run on normal scores.
    pub fn has_normal_kernels(&self) -> bool {
        matches!(self, PairCopula::Independence | PairCopula::Gaussian { .. })
    }

    // Normal-score kernels; only valid when `has_normal_kernels`.

    pub(crate) fn ln_pdf_normal(&self, x: f64, y: f64) -> f64 {
        match *self {
            PairCopula::Gaussian { rho } => gaussian::ln_pdf(x, y, rho),
            _ => 0.0,
        }
    }

    pub(crate) fn h_normal(&self, x: f64, y: f64, side: Side) -> f64 {
        let (a, b) = match side {
            Side::FirstGivenSecond => (x, y),
            Side::SecondGivenFirst => (y, x),
        };
        match *self {
            PairCopula::Gaussian { rho } => gaussian::h_scores(a, b, rho),
            _ => a,
        }
    }

    pub(crate) fn score_normal(&self, x: f64, y: f64, out: &mut [f64]) {
        if let PairCopula::Gaussian { rho } = *self {
            out[0] = gaussian::score(x, y, rho);
        }
    }

    // Unchecked kernels below expect already clamped inputs.

    pub(crate) fn ln_pdf(&self, u: f64, v: f64) -> f64 {
        match *self {
            PairCopula::Independence => 0.0,
            PairCopula::Gaussian { rho } => {
                gaussian::ln_pdf(norm_quantile(u), norm_quantile(v), rho)
            }
            PairCopula::GumbelSigned { theta } => gumbel::ln_pdf_signed(u, v, theta),
            PairCopula::StudentT { rho, nu } => {
                student::ln_pdf(t_quantile(u, nu), t_quantile(v, nu), rho, nu)
            }
        }
    }

    pub(crate) fn h(&self, u: f64, v: f64, side: Side) -> f64 {
        let (a, b) = match side {
            Side::FirstGivenSecond => (u, v),
            Side::SecondGivenFirst => (v, u),
        };
        match *self {
            PairCopula::Independence => a,
            // Exchangeable families: C(v|u) is C(u|v) with arguments swapped.
            PairCopula::Gaussian { rho } => {
                let (x, y) = (norm_quantile(a), norm_quantile(b));
                norm_cdf(gaussian::h_scores(x, y, rho))
            }
            PairCopula::StudentT { rho, nu } => {
                student::h(t_quantile(a, nu), t_quantile(b, nu), rho, nu)
            }
            PairCopula::GumbelSigned { theta } => {
                if theta >= 0.0 {
                    gumbel::h(a, b, 1.0 + theta)
                } else {
                    let delta = 1.0 - theta;
                    match side {
                        Side::FirstGivenSecond => 1.0 - gumbel::h(1.0 - u, v, delta),
                        Side::SecondGivenFirst => gumbel::h(v, 1.0 - u, delta),
                    }
                }
            }
        }
    }

    pub(crate) fn h_inv(&self, w: f64, cond: f64, side: Side) -> Result<f64> {
        let out = match *self {
            PairCopula::Independence => w,
            PairCopula::Gaussian { rho } => {
                let x = norm_quantile(w) * (1.0 - rho * rho).sqrt() + rho * norm_quantile(cond);
                norm_cdf(x)
            }
            PairCopula::StudentT { rho, nu } => {
                let y = t_quantile(cond, nu);
                let scale = ((nu + y * y) * (1.0 - rho * rho) / (nu + 1.0)).sqrt();
                t_cdf(t_quantile(w, nu + 1.0) * scale + rho * y, nu)
            }
            PairCopula::GumbelSigned { theta } => {
                if theta >= 0.0 {
                    gumbel::h_inv(w, cond, 1.0 + theta)?
                } else {
                    let delta = 1.0 - theta;
                    match side {
                        Side::FirstGivenSecond => 1.0 - gumbel::h_inv(1.0 - w, cond, delta)?,
                        Side::SecondGivenFirst => gumbel::h_inv(w, 1.0 - cond, delta)?,
                    }
                }
            }
        };
        Ok(clamp_unit(out))
    }

    /// Writes the score into `out[..arity]`.
    pub(crate) fn score_into(&self, u: f64, v: f64, out: &mut [f64]) {
        match *self {
            PairCopula::Independence => {}
            PairCopula::Gaussian { rho } => {
                out[0] = gaussian::score(norm_quantile(u), norm_quantile(v), rho);
            }
            PairCopula::GumbelSigned { theta } => {
                let h = SCORE_FD_STEP * theta.abs().max(1.0);
                out[0] = (gumbel::ln_pdf_signed(u, v, theta + h)
                    - gumbel::ln_pdf_signed(u, v, theta - h))
                    / (2.0 * h);
            }
            PairCopula::StudentT { rho, nu } => {
                let hr = SCORE_FD_STEP * rho.abs().max(1.0);
                let hn = SCORE_FD_STEP * nu.abs().max(1.0);
                let (x, y) = (t_quantile(u, nu), t_quantile(v, nu));
                out[0] = (student::ln_pdf(x, y, rho + hr, nu) - student::ln_pdf(x, y, rho - hr, nu))
                    / (2.0 * hr);
                let up = self.with_params_unchecked(&[rho, nu + hn]).ln_pdf(u, v);
                let dn = self.with_params_unchecked(&[rho, nu - hn]).ln_pdf(u, v);
                out[1] = (up - dn) / (2.0 * hn);
            }
        }
    }
}

/// Gaussian pair-copula formulas on normal scores.
pub mod gaussian {
    use super::GaussianPartials;

    #[inline]
    pub fn ln_pdf(x1: f64, x2: f64, rho: f64) -> f64 {
        let r2 = rho * rho;
        let om = 1.0 - r2;
        -0.5 * om.ln() - (r2 * (x1 * x1 + x2 * x2) - 2.0 * rho * x1 * x2) / (2.0 * om)
    }

    #[inline]
    pub fn score(x1: f64, x2: f64, rho: f64) -> f64 {
        let om = 1.0 - rho * rho;
        let om2 = om * om;
        rho / om - rho * (x1 * x1 + x2 * x2) / om2 + (1.0 + rho * rho) * x1 * x2 / om2
    }

    /// Normal score of `C(u1 | u2)`.
    #[inline]
    pub fn h_scores(x1: f64, x2: f64, rho: f64) -> f64 {
        (x1 - rho * x2) / (1.0 - rho * rho).sqrt()
    }

    pub fn partials(x1: f64, x2: f64, rho: f64) -> GaussianPartials {
        let r2 = rho * rho;
        let om = 1.0 - r2;
        let om2 = om * om;
        let om3 = om2 * om;
        let sq = om.sqrt();
        GaussianPartials {
            ds_drho: (1.0 + r2) / om2 - (1.0 + 3.0 * r2) / om3 * (x1 * x1 + x2 * x2)
                + 2.0 * (3.0 * rho + rho * r2) / om3 * x1 * x2,
            ds_dx1: ((1.0 + r2) * x2 - 2.0 * rho * x1) / om2,
            ds_dx2: ((1.0 + r2) * x1 - 2.0 * rho * x2) / om2,
            dh_drho: (rho * x1 - x2) / (om * sq),
            dh_dx1: 1.0 / sq,
            dh_dx2: -rho / sq,
        }
    }
}

mod gumbel {
    use super::*;

    /// Log density of the (unrotated) Gumbel copula with parameter
    /// `delta >= 1`.
    pub(super) fn ln_pdf(u: f64, v: f64, delta: f64) -> f64 {
        let (t1, t2) = (-u.ln(), -v.ln());
        let (l1, l2) = (t1.ln(), t2.ln());
        let ln_s = log_add_exp(delta * l1, delta * l2);
        let a = (ln_s / delta).exp();
        t1 + t2 - a + (delta - 1.0) * (l1 + l2) + (1.0 / delta - 2.0) * ln_s
            + (a + delta - 1.0).ln()
    }

    pub(super) fn ln_pdf_signed(u: f64, v: f64, theta: f64) -> f64 {
        if theta >= 0.0 {
            ln_pdf(u, v, 1.0 + theta)
        } else {
            ln_pdf(1.0 - u, v, 1.0 - theta)
        }
    }

    /// `C(u | v)` for the Gumbel copula.
    pub(super) fn h(u: f64, v: f64, delta: f64) -> f64 {
        let (t1, t2) = (-u.ln(), -v.ln());
        let l2 = t2.ln();
        let ln_s = log_add_exp(delta * t1.ln(), delta * l2);
        let a = (ln_s / delta).exp();
        let ln_h = -a + (1.0 / delta - 1.0) * ln_s + (delta - 1.0) * l2 + t2;
        ln_h.exp().min(1.0)
    }

    /// Solves `h(u | v) = w` for `u`.
    ///
    /// With `z = (t1^delta + t2^delta)^(1/delta)` and `y = z - t2 >= 0`, the
    /// equation becomes `y + (delta - 1) ln(1 + y / t2) = -ln w`, whose left
    /// side is increasing and concave in `y`.
    pub(super) fn h_inv(w: f64, v: f64, delta: f64) -> Result<f64> {
        let t2 = -v.ln();
        let target = -w.ln();
        let dm1 = delta - 1.0;
        let g = |y: f64| y + dm1 * (y / t2).ln_1p() - target;
        let (mut lo, mut hi) = (0.0_f64, target);
        let mut y = target;
        let mut converged = false;
        for _ in 0..HINV_MAX_ITER {
            let gy = g(y);
            if gy > 0.0 {
                hi = y;
            } else {
                lo = y;
            }
            let slope = 1.0 + dm1 / (t2 + y);
            let mut next = y - gy / slope;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let step = (next - y).abs();
            y = next;
            if step <= 1e-15 * y.max(1e-300) || hi - lo <= 1e-15 * hi {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Convergence {
                iterations: HINV_MAX_ITER,
            });
        }
        // t1 = z (1 - (t2 / z)^delta)^(1/delta)
        let z = t2 + y;
        let log_ratio = (y / t2).ln_1p(); // ln(z / t2)
        let inner = -(-delta * log_ratio).exp_m1();
        let ln_t1 = z.ln() + inner.ln() / delta;
        Ok((-ln_t1.exp()).exp())
    }
}

mod student {
    use super::*;

    pub(super) fn ln_pdf(x: f64, y: f64, rho: f64, nu: f64) -> f64 {
        let om = 1.0 - rho * rho;
        let q = (x * x + y * y - 2.0 * rho * x * y) / (nu * om);
        ln_gamma(0.5 * (nu + 2.0)) + ln_gamma(0.5 * nu) - 2.0 * ln_gamma(0.5 * (nu + 1.0))
            - 0.5 * om.ln()
            - 0.5 * (nu + 2.0) * q.ln_1p()
            + 0.5 * (nu + 1.0) * ((x * x / nu).ln_1p() + (y * y / nu).ln_1p())
    }

    /// `C(u | v)` from t scores `x = t_nu^-1(u)`, `y = t_nu^-1(v)`.
    pub(super) fn h(x: f64, y: f64, rho: f64, nu: f64) -> f64 {
        let scale = ((nu + y * y) * (1.0 - rho * rho) / (nu + 1.0)).sqrt();
        t_cdf((x - rho * y) / scale, nu + 1.0)
    }
}
