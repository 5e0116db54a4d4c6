//! Normal and Student's t distribution functions.
//!
//! erfc comes from `libm`; its inverse, the regularized incomplete beta
//! function and its inverse come from `statrs`. Quantiles get one Newton
//! polish step against the matching CDF.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use statrs::function::beta::{beta_reg, inv_beta_reg};
use libm::erfc;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::ln_gamma;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal quantile for `p` in (0, 1).
pub fn norm_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0, "norm_quantile({p})");
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    let dens = norm_pdf(x);
    if !(dens > 0.0) {
        return x;
    }
    // Newton polish, evaluating the residual in the tail that keeps it well
    // conditioned.
    if x > 0.0 {
        x + (norm_cdf(-x) - (1.0 - p)) / dens
    } else {
        x - (norm_cdf(x) - p) / dens
    }
}

/// Log density of Student's t with `nu` degrees of freedom.
pub fn t_ln_pdf(x: f64, nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0))
        - ln_gamma(0.5 * nu)
        - 0.5 * (nu * PI).ln()
        - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()
}

#[inline]
pub fn t_pdf(x: f64, nu: f64) -> f64 {
    t_ln_pdf(x, nu).exp()
}

/// Student's t distribution function.
pub fn t_cdf(x: f64, nu: f64) -> f64 {
    if x == 0.0 {
        return 0.5;
    }
    let x2 = x * x;
    // Pick the incomplete-beta argument that is not close to 1.
    let tail = if nu < x2 {
        // P(|T| > |x|) / 2 directly.
        0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + x2))
    } else {
        0.5 - 0.5 * beta_reg(0.5, 0.5 * nu, x2 / (nu + x2))
    };
    if x < 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Student's t quantile for `p` in (0, 1).
pub fn t_quantile(p: f64, nu: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0, "t_quantile({p})");
    if p == 0.5 {
        return 0.0;
    }
    let lower = p.min(1.0 - p);
    let sign = if p < 0.5 { -1.0 } else { 1.0 };
    let mag = if lower < 0.25 {
        let z = inv_beta_reg(0.5 * nu, 0.5, 2.0 * lower);
        (nu * (1.0 - z) / z).sqrt()
    } else {
        let y = inv_beta_reg(0.5, 0.5 * nu, 1.0 - 2.0 * lower);
        (nu * y / (1.0 - y)).sqrt()
    };
    // Newton polish on the lower tail: solve F(-m) = lower.
    let mut m = mag;
    for _ in 0..2 {
        let f = t_pdf(-m, nu);
        if !(f > 0.0) {
            break;
        }
        let step = (t_cdf(-m, nu) - lower) / f;
        if !step.is_finite() {
            break;
        }
        m += step;
        if step.abs() <= 1e-15 * m.abs() {
            break;
        }
    }
    sign * m
}

/// `ln(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}
