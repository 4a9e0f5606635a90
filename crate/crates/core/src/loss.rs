//! Training objectives expressed as [`LossFunctional`]s.
//!
//! Every loss is a mean over the batch. Per-sample terms are accumulated in
//! batch order.

use alloc::vec;
use alloc::vec::Vec;

use crate::batch::SampleBatch;
use crate::density::DensitySpec;
use crate::diff::{BatchAdjoint, BatchOutputs, LossFunctional, Order};
use crate::error::{Error, Result};
use crate::linalg;

fn require_nonempty(out: &BatchOutputs) -> Result<f64> {
    if out.is_empty() {
        Err(Error::EmptyBatch)
    } else {
        Ok(out.len() as f64)
    }
}

/// Mean squared Monge-Ampere residual `(det D^2u(x) g(grad u(x)) - f(x))^2`.
///
/// The determinant is signed, so an indefinite Hessian is penalized rather
/// than hidden.
pub struct ResidualLoss<'a> {
    target: &'a DensitySpec,
    source_density: Vec<f64>,
}

impl<'a> ResidualLoss<'a> {
    /// Precomputes the source density `f` at the collocation points.
    pub fn new(source: &DensitySpec, target: &'a DensitySpec, points: &SampleBatch) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let source_density = source
            .log_density_batch(points)?
            .into_iter()
            .map(libm::exp)
            .collect();
        Ok(Self {
            target,
            source_density,
        })
    }

    pub fn source_density(&self) -> &[f64] {
        &self.source_density
    }
}

impl LossFunctional for ResidualLoss<'_> {
    fn order(&self) -> Order {
        Order::Hessian
    }

    fn evaluate(
        &self,
        out: &BatchOutputs,
        points: &SampleBatch,
        mut seed: Option<&mut BatchAdjoint>,
    ) -> Result<f64> {
        let n = require_nonempty(out)?;
        let d = out.dim;
        let ys = out.grad_batch();
        let mut glog_grad = vec![0.0; ys.len() * d];
        let want_grad = seed.is_some();
        // the collocation point is the natural starting guess when the target
        // density has to invert its own map at grad u(x)
        let glog = self.target.log_density_grad_batch_hinted(
            &ys,
            Some(points),
            if want_grad { Some(&mut glog_grad) } else { None },
        )?;
        let mut total = 0.0;
        for b in 0..out.len() {
            let (det, cof) = linalg::det_and_cofactor(out.hess(b), d);
            let g = libm::exp(glog[b]);
            let r = det * g - self.source_density[b];
            if !r.is_finite() {
                return Err(Error::NonFiniteLoss { sample: b });
            }
            total += r * r;
            if let Some(s) = seed.as_deref_mut() {
                let c = 2.0 * r / n;
                for (h, cf) in s.hess_mut(b).iter_mut().zip(&cof) {
                    *h = c * g * cf;
                }
                let gd = &glog_grad[b * d..(b + 1) * d];
                for (o, gi) in s.grad_mut(b).iter_mut().zip(gd) {
                    *o = c * det * g * gi;
                }
            }
        }
        Ok(total / n)
    }
}

/// Negative mean pullback log-likelihood
/// `-(log det D^2u(x) + log g(grad u(x)))` of the batch under background `g`.
pub struct NllLoss<'a> {
    background: &'a DensitySpec,
}

impl<'a> NllLoss<'a> {
    pub fn new(background: &'a DensitySpec) -> Self {
        Self { background }
    }
}

impl LossFunctional for NllLoss<'_> {
    fn order(&self) -> Order {
        Order::Hessian
    }

    fn evaluate(
        &self,
        out: &BatchOutputs,
        _points: &SampleBatch,
        mut seed: Option<&mut BatchAdjoint>,
    ) -> Result<f64> {
        let n = require_nonempty(out)?;
        let d = out.dim;
        let ys = out.grad_batch();
        let mut glog_grad = vec![0.0; ys.len() * d];
        let glog = self.background.log_density_grad_batch(
            &ys,
            if seed.is_some() { Some(&mut glog_grad) } else { None },
        )?;
        let mut total = 0.0;
        for b in 0..out.len() {
            let h = out.hess(b);
            let (logdet, inv) =
                linalg::spd_logdet_inverse(h, d).ok_or_else(|| Error::NonPdHessian {
                    sample: b,
                    min_eigenvalue: linalg::min_eigenvalue(h, d),
                })?;
            let term = logdet + glog[b];
            if !term.is_finite() {
                return Err(Error::NonFiniteLoss { sample: b });
            }
            total -= term;
            if let Some(s) = seed.as_deref_mut() {
                for (o, v) in s.hess_mut(b).iter_mut().zip(&inv) {
                    *o = -v / n;
                }
                for (o, v) in s.grad_mut(b).iter_mut().zip(&glog_grad[b * d..(b + 1) * d]) {
                    *o = -v / n;
                }
            }
        }
        Ok(total / n)
    }
}

/// Mean `|grad v(y) - x|^2` where the field is evaluated at `y` and `x` is
/// the matching row of `targets`. With `y = grad u(x)` this is the inverse
/// consistency loss; with `y = x` it is identity pretraining.
pub struct MatchLoss<'a> {
    targets: &'a SampleBatch,
}

impl<'a> MatchLoss<'a> {
    pub fn new(targets: &'a SampleBatch) -> Self {
        Self { targets }
    }
}

impl LossFunctional for MatchLoss<'_> {
    fn order(&self) -> Order {
        Order::Gradient
    }

    fn evaluate(
        &self,
        out: &BatchOutputs,
        _points: &SampleBatch,
        mut seed: Option<&mut BatchAdjoint>,
    ) -> Result<f64> {
        let n = require_nonempty(out)?;
        if self.targets.len() != out.len() || self.targets.dim() != out.dim {
            return Err(Error::DimensionMismatch {
                expected: out.len(),
                got: self.targets.len(),
            });
        }
        let mut total = 0.0;
        for b in 0..out.len() {
            let g = out.grad(b);
            let x = self.targets.row(b);
            let mut term = 0.0;
            for i in 0..out.dim {
                term += (g[i] - x[i]) * (g[i] - x[i]);
            }
            if !term.is_finite() {
                return Err(Error::NonFiniteLoss { sample: b });
            }
            total += term;
            if let Some(s) = seed.as_deref_mut() {
                for (i, o) in s.grad_mut(b).iter_mut().enumerate() {
                    *o = 2.0 * (g[i] - x[i]) / n;
                }
            }
        }
        Ok(total / n)
    }
}
