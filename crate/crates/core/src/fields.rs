//! Closed-form convex potentials.
//!
//! These implement [`ScalarField`] so the losses and checks that run on
//! networks also run on exact solutions: `1/2 |x|^2` (identity map), affine
//! Gaussian maps, and the radial quartic whose gradient `(x.x) x` carries the
//! annulus density onto the standard Gaussian.

use alloc::vec;
use alloc::vec::Vec;

use crate::batch::SampleBatch;
use crate::diff::{BatchAdjoint, BatchOutputs, Order, ParamLayout, ParamRole, ScalarField};
use crate::error::Result;

pub struct ClosedFormTape {
    x: Vec<f64>,
    out: BatchOutputs,
}

/// `u(x) = 1/2 x^T A x + b^T x` with parameters `[A (row-major, d x d), b]`.
/// `A` enters only through its symmetric part.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    dim: usize,
    layout: ParamLayout,
}

impl Quadratic {
    pub fn new(dim: usize) -> Self {
        let mut layout = ParamLayout::new();
        layout.push(0, ParamRole::Coefficient, dim, dim);
        layout.push(1, ParamRole::Coefficient, 1, dim);
        Self { dim, layout }
    }

    /// Parameters for `s/2 |x|^2`.
    pub fn isotropic(dim: usize, s: f64) -> (Self, Vec<f64>) {
        let mut p = vec![0.0; dim * dim + dim];
        for i in 0..dim {
            p[i * dim + i] = s;
        }
        (Self::new(dim), p)
    }

    /// Parameters whose gradient is the affine map `x -> A x + b`.
    pub fn affine(dim: usize, a: &[f64], b: &[f64]) -> (Self, Vec<f64>) {
        let mut p = a.to_vec();
        p.extend_from_slice(b);
        (Self::new(dim), p)
    }

    fn sym(&self, params: &[f64], i: usize, j: usize) -> f64 {
        0.5 * (params[i * self.dim + j] + params[j * self.dim + i])
    }
}

impl ScalarField for Quadratic {
    type Tape = ClosedFormTape;

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn forward(&self, params: &[f64], xs: &SampleBatch, order: Order) -> Result<ClosedFormTape> {
        self.check_inputs(params, xs)?;
        let d = self.dim;
        let bvec = &params[d * d..];
        let mut out = BatchOutputs::new(order, d, xs.len());
        for (n, x) in xs.rows().enumerate() {
            let mut v = 0.0;
            for i in 0..d {
                let mut ax = 0.0;
                for j in 0..d {
                    ax += self.sym(params, i, j) * x[j];
                }
                v += 0.5 * x[i] * ax + bvec[i] * x[i];
                if order >= Order::Gradient {
                    out.grads[n * d + i] = ax + bvec[i];
                }
                if order == Order::Hessian {
                    for j in 0..d {
                        out.hess[n * d * d + i * d + j] = self.sym(params, i, j);
                    }
                }
            }
            out.values[n] = v;
        }
        Ok(ClosedFormTape {
            x: xs.as_slice().to_vec(),
            out,
        })
    }

    fn outputs<'t>(&self, tape: &'t ClosedFormTape) -> &'t BatchOutputs {
        &tape.out
    }

    fn backward(
        &self,
        params: &[f64],
        tape: &ClosedFormTape,
        seed: &BatchAdjoint,
        param_grad: &mut [f64],
        mut input_grad: Option<&mut [f64]>,
    ) {
        let d = self.dim;
        let bvec = &params[d * d..];
        for n in 0..seed.len() {
            let x = &tape.x[n * d..(n + 1) * d];
            let ub = seed.value[n];
            let gb: Vec<f64> = if seed.order >= Order::Gradient {
                seed.grad[n * d..(n + 1) * d].to_vec()
            } else {
                vec![0.0; d]
            };
            for i in 0..d {
                for j in 0..d {
                    let mut g = 0.5 * ub * x[i] * x[j] + 0.5 * (gb[i] * x[j] + gb[j] * x[i]);
                    if seed.order == Order::Hessian {
                        let h = &seed.hess[n * d * d..(n + 1) * d * d];
                        g += 0.5 * (h[i * d + j] + h[j * d + i]);
                    }
                    param_grad[i * d + j] += g;
                }
                param_grad[d * d + i] += ub * x[i] + gb[i];
            }
            if let Some(xg) = input_grad.as_deref_mut() {
                for i in 0..d {
                    let mut s = ub * bvec[i];
                    for j in 0..d {
                        let a = self.sym(params, i, j);
                        s += ub * a * x[j] + a * gb[j];
                    }
                    xg[n * d + i] += s;
                }
            }
        }
    }
}

/// `u(x) = c/4 (x.x)^2`, parameters `[c]`. Gradient `c (x.x) x`, Hessian
/// `c ((x.x) I + 2 x x^T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quartic {
    dim: usize,
    layout: ParamLayout,
}

impl Quartic {
    pub fn new(dim: usize) -> Self {
        let mut layout = ParamLayout::new();
        layout.push(0, ParamRole::Coefficient, 1, 1);
        Self { dim, layout }
    }
}

impl ScalarField for Quartic {
    type Tape = ClosedFormTape;

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn forward(&self, params: &[f64], xs: &SampleBatch, order: Order) -> Result<ClosedFormTape> {
        self.check_inputs(params, xs)?;
        let d = self.dim;
        let c = params[0];
        let mut out = BatchOutputs::new(order, d, xs.len());
        for (n, x) in xs.rows().enumerate() {
            let r2: f64 = x.iter().map(|v| v * v).sum();
            out.values[n] = 0.25 * c * r2 * r2;
            if order >= Order::Gradient {
                for i in 0..d {
                    out.grads[n * d + i] = c * r2 * x[i];
                }
            }
            if order == Order::Hessian {
                for i in 0..d {
                    for j in 0..d {
                        let delta = if i == j { r2 } else { 0.0 };
                        out.hess[n * d * d + i * d + j] = c * (delta + 2.0 * x[i] * x[j]);
                    }
                }
            }
        }
        Ok(ClosedFormTape {
            x: xs.as_slice().to_vec(),
            out,
        })
    }

    fn outputs<'t>(&self, tape: &'t ClosedFormTape) -> &'t BatchOutputs {
        &tape.out
    }

    fn backward(
        &self,
        params: &[f64],
        tape: &ClosedFormTape,
        seed: &BatchAdjoint,
        param_grad: &mut [f64],
        mut input_grad: Option<&mut [f64]>,
    ) {
        let d = self.dim;
        let c = params[0];
        for n in 0..seed.len() {
            let x = &tape.x[n * d..(n + 1) * d];
            let r2: f64 = x.iter().map(|v| v * v).sum();
            let ub = seed.value[n];
            let mut dc = 0.25 * ub * r2 * r2;
            let mut xg = vec![0.0; d];
            for i in 0..d {
                xg[i] += ub * c * r2 * x[i];
            }
            if seed.order >= Order::Gradient {
                let gb = &seed.grad[n * d..(n + 1) * d];
                let gx: f64 = gb.iter().zip(x).map(|(a, b)| a * b).sum();
                dc += r2 * gx;
                for i in 0..d {
                    xg[i] += c * (2.0 * gx * x[i] + r2 * gb[i]);
                }
            }
            if seed.order == Order::Hessian {
                let h = &seed.hess[n * d * d..(n + 1) * d * d];
                let tr: f64 = (0..d).map(|i| h[i * d + i]).sum();
                for i in 0..d {
                    for j in 0..d {
                        let delta = if i == j { r2 } else { 0.0 };
                        dc += h[i * d + j] * (delta + 2.0 * x[i] * x[j]);
                    }
                }
                for i in 0..d {
                    let mut s = 2.0 * tr * x[i];
                    for j in 0..d {
                        s += 2.0 * (h[i * d + j] + h[j * d + i]) * x[j];
                    }
                    xg[i] += c * s;
                }
            }
            param_grad[0] += dc;
            if let Some(out) = input_grad.as_deref_mut() {
                for i in 0..d {
                    out[n * d + i] += xg[i];
                }
            }
        }
    }
}
