//! Inversion of a gradient map `x -> grad u(x)` for convex `u`.
//!
//! Solves `grad u(x) = y` by minimizing the strictly convex objective
//! `u(x) - <x, y>` with damped Newton steps; the minimizer is the gradient of
//! the Legendre conjugate `u*` at `y`.

use alloc::vec::Vec;

use crate::batch::SampleBatch;
use crate::diff::{eval_batch, Order, ScalarField};
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Stop when `|grad u(x) - y|_inf <= tol * (1 + |y|_inf)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Iterates beyond this norm mean `y` is outside the range of the map.
    pub escape_radius: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 100,
            escape_radius: 1e8,
        }
    }
}

pub fn invert_gradient<F: ScalarField>(
    field: &F,
    params: &[f64],
    y: &[f64],
    start: &[f64],
    opts: &NewtonOptions,
) -> Result<Vec<f64>> {
    let d = field.input_dim();
    if y.len() != d || start.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: y.len().min(start.len()),
        });
    }
    let scale = 1.0 + y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let objective = |x: &[f64]| -> Result<f64> {
        let v = eval_batch(field, params, &SampleBatch::single(x), Order::Value)?.values[0];
        Ok(v - linalg::dot(x, y))
    };

    let mut x = start.to_vec();
    let mut residual = f64::INFINITY;
    for _ in 0..=opts.max_iter {
        let out = eval_batch(field, params, &SampleBatch::single(&x), Order::Hessian)?;
        let g: Vec<f64> = out.grad(0).iter().zip(y).map(|(a, b)| a - b).collect();
        residual = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if residual <= opts.tol * scale {
            return Ok(x);
        }
        if !residual.is_finite() {
            break;
        }
        let step = newton_step(out.hess(0), &g, d);
        let xy = linalg::dot(&x, y);
        let phi = out.value(0) - xy;
        let noise = rounding_noise(out.value(0), xy);
        let slope = linalg::dot(&g, &step);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-14 {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            match objective(&trial) {
                Ok(v) if v <= phi + 1e-4 * t * slope + noise => {
                    x = trial;
                    accepted = true;
                    break;
                }
                _ => t *= 0.5,
            }
        }
        if !accepted || linalg::norm_sq(&x) > opts.escape_radius * opts.escape_radius {
            break;
        }
    }
    Err(Error::InversionFailed { residual })
}

/// Size of rounding error in `u(x) - <x, y>`. Near the solution the true
/// decrease falls below it and the sufficient-decrease test would reject
/// every step.
fn rounding_noise(u: f64, xy: f64) -> f64 {
    1e-13 * (1.0 + u.abs() + xy.abs())
}

/// `-H^{-1} g`, regularizing `H` until its Cholesky factorization exists.
fn newton_step(h: &[f64], g: &[f64], d: usize) -> Vec<f64> {
    let trace: f64 = (0..d).map(|i| h[i * d + i].abs()).sum::<f64>() / d as f64;
    let mut shift = 0.0;
    loop {
        let mut m = linalg::to_matrix(h, d);
        for i in 0..d {
            m[(i, i)] += shift;
        }
        if let Some(chol) = m.cholesky() {
            let rhs = nalgebra::DVector::from_iterator(d, g.iter().map(|v| -v));
            return chol.solve(&rhs).iter().copied().collect();
        }
        shift = if shift == 0.0 {
            1e-10 * (1.0 + trace)
        } else {
            shift * 10.0
        };
        if shift > 1e12 {
            return g.iter().map(|v| -v).collect();
        }
    }
}

/// Inverts every row of `ys`, starting each solve at the target point itself.
pub fn invert_gradient_batch<F: ScalarField>(
    field: &F,
    params: &[f64],
    ys: &SampleBatch,
    opts: &NewtonOptions,
) -> Vec<Result<Vec<f64>>> {
    invert_gradient_batch_from(field, params, ys, ys, opts)
}

/// Batched form of [`invert_gradient`]: the same damped Newton iteration for
/// every row, with the network evaluated once per sweep over all unfinished
/// rows. Row `b` starts at `starts.row(b)`.
pub fn invert_gradient_batch_from<F: ScalarField>(
    field: &F,
    params: &[f64],
    ys: &SampleBatch,
    starts: &SampleBatch,
    opts: &NewtonOptions,
) -> Vec<Result<Vec<f64>>> {
    let d = field.input_dim();
    let n = ys.len();
    if ys.dim() != d || starts.dim() != d || starts.len() != n {
        let e = Error::DimensionMismatch {
            expected: d,
            got: ys.dim().min(starts.dim()),
        };
        return (0..n).map(|_| Err(e.clone())).collect();
    }
    let mut xs = starts.clone();
    let mut out: Vec<Option<Result<Vec<f64>>>> = (0..n).map(|_| None).collect();
    let mut residual = alloc::vec![f64::INFINITY; n];
    let mut active: Vec<usize> = (0..n).collect();
    let fail = |r: f64| Some(Err(Error::InversionFailed { residual: r }));

    for _ in 0..=opts.max_iter {
        if active.is_empty() {
            break;
        }
        let at = xs.select(&active);
        let evals = match eval_batch(field, params, &at, Order::Hessian) {
            Ok(e) => e,
            Err(e) => {
                for &b in &active {
                    out[b] = Some(Err(e.clone()));
                }
                active.clear();
                break;
            }
        };
        // rows still needing a step, with direction, objective and slope
        let mut pending = Vec::new();
        for (k, &b) in active.iter().enumerate() {
            let y = ys.row(b);
            let x = xs.row(b);
            let g: Vec<f64> = evals.grad(k).iter().zip(y).map(|(a, c)| a - c).collect();
            let r = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            residual[b] = r;
            let scale = 1.0 + y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if r <= opts.tol * scale {
                out[b] = Some(Ok(x.to_vec()));
            } else if !r.is_finite() {
                out[b] = fail(r);
            } else {
                let step = newton_step(evals.hess(k), &g, d);
                let xy = linalg::dot(x, y);
                let phi = evals.value(k) - xy;
                let slope = linalg::dot(&g, &step);
                let noise = rounding_noise(evals.value(k), xy);
                pending.push((b, step, phi, slope, noise));
            }
        }

        let mut t = 1.0;
        let mut next_active = Vec::new();
        while !pending.is_empty() && t > 1e-14 {
            let mut trials = SampleBatch::empty(d);
            for (b, step, ..) in &pending {
                let x = xs.row(*b);
                let trial: Vec<f64> = x.iter().zip(step).map(|(a, s)| a + t * s).collect();
                trials.push(&trial);
            }
            let values = eval_batch(field, params, &trials, Order::Value).map(|o| o.values);
            let mut rejected = Vec::new();
            for (k, (b, step, phi, slope, noise)) in pending.into_iter().enumerate() {
                let y = ys.row(b);
                let ok = match &values {
                    Ok(v) => {
                        let f = v[k] - linalg::dot(trials.row(k), y);
                        f <= phi + 1e-4 * t * slope + noise
                    }
                    Err(_) => false,
                };
                if ok {
                    xs.row_mut(b).copy_from_slice(trials.row(k));
                    if linalg::norm_sq(xs.row(b)) > opts.escape_radius * opts.escape_radius {
                        out[b] = fail(residual[b]);
                    } else {
                        next_active.push(b);
                    }
                } else {
                    rejected.push((b, step, phi, slope, noise));
                }
            }
            pending = rejected;
            t *= 0.5;
        }
        for (b, ..) in pending {
            out[b] = fail(residual[b]);
        }
        next_active.sort_unstable();
        active = next_active;
    }
    for &b in &active {
        out[b] = fail(residual[b]);
    }
    out.into_iter()
        .enumerate()
        .map(|(b, r)| r.unwrap_or_else(|| Err(Error::InversionFailed { residual: residual[b] })))
        .collect()
}
