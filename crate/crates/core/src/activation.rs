//! Powered softplus, `(log(1 + e^x))^alpha`.
//!
//! Convex and nondecreasing for `alpha >= 1`, strictly increasing, and with a
//! strictly positive second derivative everywhere, so a non-negative
//! combination of such units has a positive definite Hessian wherever the
//! input weights span `R^d`.

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 1.1;

/// `log(1 + e^x)` without overflow for large `x`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// Logistic sigmoid, the derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn softplus_alpha(x: f64, alpha: f64) -> f64 {
    SoftplusPower { alpha }.value(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftplusPower {
    pub alpha: f64,
}

impl Default for SoftplusPower {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl SoftplusPower {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha >= 1.0) || !alpha.is_finite() {
            return Err(Error::InvalidAlpha(alpha));
        }
        Ok(Self { alpha })
    }

    pub fn value(&self, x: f64) -> f64 {
        let s = softplus(x);
        if self.alpha == 1.0 || s == 0.0 {
            s
        } else {
            libm::exp(self.alpha * libm::log(s))
        }
    }

    /// Value and first three derivatives.
    ///
    /// With `s = softplus(x)`, `q = sigmoid(x)` and `r = q / s`:
    /// `f' = a s^a r`, `f'' = a s^a r ((a-1) r + (1-q))`,
    /// `f''' = a s^a r ((a-1)(a-2) r^2 + 3(a-1) r (1-q) + (1-q)(1-2q))`.
    pub fn derivatives(&self, x: f64) -> [f64; 4] {
        let a = self.alpha;
        // one exponential serves softplus and both sigmoid branches
        let e = libm::exp(-x.abs());
        let s = x.max(0.0) + libm::log1p(e);
        if s == 0.0 {
            return [0.0; 4];
        }
        let inv = 1.0 / (1.0 + e);
        let (q, one_minus_q) = if x >= 0.0 { (inv, e * inv) } else { (e * inv, inv) };
        let r = q / s;
        let sa = if a == 1.0 { s } else { libm::exp(a * libm::log(s)) };
        let base = a * sa * r;
        let d1 = base;
        let d2 = base * ((a - 1.0) * r + one_minus_q);
        let d3 = base
            * ((a - 1.0) * (a - 2.0) * r * r
                + 3.0 * (a - 1.0) * r * one_minus_q
                + one_minus_q * (1.0 - 2.0 * q));
        [sa, d1, d2, d3]
    }
}
