//! Exact input derivatives of parameterized scalar fields and parameter
//! gradients of losses built from them.
//!
//! A [`ScalarField`] records a batched forward pass at a requested
//! [`Order`] (value, gradient, or gradient plus Hessian) into a tape, then
//! runs a reverse sweep given per-sample adjoints of the value, gradient and
//! Hessian. The reverse sweep accumulates parameter gradients and, on
//! request, gradients with respect to the input points.
//!
//! All batch reductions run in sample order on a single thread, so results
//! are bitwise reproducible.

use alloc::vec;
use alloc::vec::Vec;

use crate::batch::SampleBatch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Order {
    Value,
    Gradient,
    Hessian,
}

impl Order {
    /// Forward channels carried per unit: value, `d` gradient entries,
    /// `d(d+1)/2` packed Hessian entries.
    pub fn channels(self, dim: usize) -> usize {
        match self {
            Order::Value => 1,
            Order::Gradient => 1 + dim,
            Order::Hessian => 1 + dim + packed_len(dim),
        }
    }
}

pub fn packed_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Upper-triangle index pairs `(i, j)`, `i <= j`, in packed order.
pub fn packed_pairs(dim: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(packed_len(dim));
    for i in 0..dim {
        for j in i..dim {
            out.push((i, j));
        }
    }
    out
}

/// Value, input gradient and input Hessian (row-major, exactly symmetric) at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeBundle {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

/// Forward results for a whole batch. `grads` and `hess` are empty below
/// the corresponding order.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutputs {
    pub order: Order,
    pub dim: usize,
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
    pub hess: Vec<f64>,
}

impl BatchOutputs {
    pub fn new(order: Order, dim: usize, n: usize) -> Self {
        Self {
            order,
            dim,
            values: vec![0.0; n],
            grads: if order >= Order::Gradient {
                vec![0.0; n * dim]
            } else {
                Vec::new()
            },
            hess: if order >= Order::Hessian {
                vec![0.0; n * dim * dim]
            } else {
                Vec::new()
            },
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, b: usize) -> f64 {
        self.values[b]
    }

    pub fn grad(&self, b: usize) -> &[f64] {
        &self.grads[b * self.dim..(b + 1) * self.dim]
    }

    pub fn hess(&self, b: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.hess[b * dd..(b + 1) * dd]
    }

    pub fn bundle(&self, b: usize) -> DerivativeBundle {
        DerivativeBundle {
            value: self.value(b),
            grad: if self.order >= Order::Gradient {
                self.grad(b).to_vec()
            } else {
                Vec::new()
            },
            hess: if self.order >= Order::Hessian {
                self.hess(b).to_vec()
            } else {
                Vec::new()
            },
        }
    }

    /// Gradients as a batch of points, i.e. the image of the inputs under the gradient map.
    pub fn grad_batch(&self) -> SampleBatch {
        SampleBatch::new(self.dim, self.grads.clone()).expect("gradient rows have input dimension")
    }
}

/// Adjoints of a scalar loss with respect to each sample's value, gradient
/// and (full, row-major) Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchAdjoint {
    pub order: Order,
    pub dim: usize,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

impl BatchAdjoint {
    pub fn zeros(order: Order, dim: usize, n: usize) -> Self {
        let o = BatchOutputs::new(order, dim, n);
        Self {
            order,
            dim,
            value: o.values,
            grad: o.grads,
            hess: o.hess,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn grad_mut(&mut self, b: usize) -> &mut [f64] {
        &mut self.grad[b * self.dim..(b + 1) * self.dim]
    }

    pub fn hess_mut(&mut self, b: usize) -> &mut [f64] {
        let dd = self.dim * self.dim;
        &mut self.hess[b * dd..(b + 1) * dd]
    }

    /// Per-sample seed vector in forward channel layout (value, gradient,
    /// packed Hessian). Off-diagonal packed entries collect both triangles.
    pub fn packed_seed(&self, b: usize, pairs: &[(usize, usize)], out: &mut [f64]) {
        let d = self.dim;
        out[0] = self.value[b];
        if self.order >= Order::Gradient {
            out[1..1 + d].copy_from_slice(&self.grad[b * d..(b + 1) * d]);
        }
        if self.order >= Order::Hessian {
            let h = &self.hess[b * d * d..(b + 1) * d * d];
            for (p, &(i, j)) in pairs.iter().enumerate() {
                out[1 + d + p] = if i == j {
                    h[i * d + i]
                } else {
                    h[i * d + j] + h[j * d + i]
                };
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamRole {
    /// Hidden-to-hidden weights, constrained non-negative.
    HiddenWeights,
    /// Input pass-through weights, unconstrained.
    InputWeights,
    Bias,
    /// Read-out weights on the last hidden layer, constrained non-negative.
    ReadoutHidden,
    ReadoutInput,
    ReadoutBias,
    /// Parameters of closed-form fields.
    Coefficient,
}

impl ParamRole {
    pub fn is_constrained(self) -> bool {
        matches!(self, ParamRole::HiddenWeights | ParamRole::ReadoutHidden)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub layer: usize,
    pub role: ParamRole,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Maps flat parameter indices to `(layer, role)` blocks.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParamLayout {
    blocks: Vec<ParamBlock>,
    len: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a `rows x cols` block and returns its offset.
    pub fn push(&mut self, layer: usize, role: ParamRole, rows: usize, cols: usize) -> usize {
        let offset = self.len;
        self.blocks.push(ParamBlock {
            layer,
            role,
            offset,
            rows,
            cols,
        });
        self.len += rows * cols;
        offset
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn block(&self, layer: usize, role: ParamRole) -> Option<&ParamBlock> {
        self.blocks
            .iter()
            .find(|b| b.layer == layer && b.role == role)
    }

    /// Block containing flat index `i`.
    pub fn locate(&self, i: usize) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.range().contains(&i))
    }

    pub fn check(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.len {
            return Err(Error::LayoutMismatch {
                expected: self.len,
                got: params.len(),
            });
        }
        Ok(())
    }
}

/// Flat trainable parameters together with their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

/// Gradient with respect to a [`ParamVector`]; same layout and length.
pub type ParamGrad = ParamVector;

impl ParamVector {
    pub fn new(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        layout.check(&values)?;
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: ParamLayout) -> Self {
        let values = vec![0.0; layout.len()];
        Self { layout, values }
    }

    pub fn block(&self, layer: usize, role: ParamRole) -> Option<&[f64]> {
        self.layout
            .block(layer, role)
            .map(|b| &self.values[b.range()])
    }

    pub fn block_mut(&mut self, layer: usize, role: ParamRole) -> Option<&mut [f64]> {
        let r = self.layout.block(layer, role)?.range();
        Some(&mut self.values[r])
    }
}

/// A scalar map `(params, x) -> u` with exact input derivatives up to second
/// order and a reverse sweep for parameter and input gradients.
pub trait ScalarField {
    type Tape;

    fn input_dim(&self) -> usize;

    fn layout(&self) -> &ParamLayout;

    fn forward(&self, params: &[f64], xs: &SampleBatch, order: Order) -> Result<Self::Tape>;

    fn outputs<'t>(&self, tape: &'t Self::Tape) -> &'t BatchOutputs;

    /// Accumulates (adds) `d loss / d params` into `param_grad` and, when
    /// given, `d loss / d x` into `input_grad` (row-major like the batch).
    fn backward(
        &self,
        params: &[f64],
        tape: &Self::Tape,
        seed: &BatchAdjoint,
        param_grad: &mut [f64],
        input_grad: Option<&mut [f64]>,
    );

    fn check_inputs(&self, params: &[f64], xs: &SampleBatch) -> Result<()> {
        self.layout().check(params)?;
        if xs.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: xs.dim(),
            });
        }
        Ok(())
    }
}

pub fn eval_batch<F: ScalarField>(
    field: &F,
    params: &[f64],
    xs: &SampleBatch,
    order: Order,
) -> Result<BatchOutputs> {
    let tape = field.forward(params, xs, order)?;
    Ok(field.outputs(&tape).clone())
}

pub fn eval_with_derivatives<F: ScalarField>(
    field: &F,
    params: &[f64],
    x: &[f64],
) -> Result<DerivativeBundle> {
    let out = eval_batch(field, params, &SampleBatch::single(x), Order::Hessian)?;
    Ok(out.bundle(0))
}

/// A scalar loss over a batch, expressed through each sample's value,
/// gradient and Hessian of the field.
pub trait LossFunctional {
    /// Highest derivative order the loss reads.
    fn order(&self) -> Order;

    /// Loss value; when `seed` is given, also writes `d loss / d outputs`.
    /// Non-finite per-sample contributions are reported with the sample index.
    fn evaluate(
        &self,
        outputs: &BatchOutputs,
        points: &SampleBatch,
        seed: Option<&mut BatchAdjoint>,
    ) -> Result<f64>;
}

pub fn loss_value<F: ScalarField>(
    loss: &dyn LossFunctional,
    field: &F,
    params: &[f64],
    batch: &SampleBatch,
) -> Result<f64> {
    let tape = field.forward(params, batch, loss.order())?;
    loss.evaluate(field.outputs(&tape), batch, None)
}

pub fn value_and_param_gradient<F: ScalarField>(
    loss: &dyn LossFunctional,
    field: &F,
    params: &[f64],
    batch: &SampleBatch,
) -> Result<(f64, Vec<f64>)> {
    let order = loss.order();
    let tape = field.forward(params, batch, order)?;
    let mut seed = BatchAdjoint::zeros(order, field.input_dim(), batch.len());
    let value = loss.evaluate(field.outputs(&tape), batch, Some(&mut seed))?;
    let mut grad = vec![0.0; params.len()];
    field.backward(params, &tape, &seed, &mut grad, None);
    Ok((value, grad))
}

pub fn param_gradient<F: ScalarField>(
    loss: &dyn LossFunctional,
    field: &F,
    params: &[f64],
    batch: &SampleBatch,
) -> Result<ParamGrad> {
    let (_, g) = value_and_param_gradient(loss, field, params, batch)?;
    ParamVector::new(field.layout().clone(), g)
}

/// Central-difference comparison of propagated derivatives.
///
/// Each error is `max|propagated - fd| / max(|propagated|_inf, |fd|_inf, noise)`
/// where `noise` is the roundoff floor of the difference quotient
/// (`1e3 * eps * (1 + |f|) / h^k`), below which finite differences carry no
/// information.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffReport {
    pub grad_rel_error: f64,
    pub hess_rel_error: f64,
    pub param_rel_error: f64,
}

impl DiffReport {
    pub fn max_error(&self) -> f64 {
        self.grad_rel_error
            .max(self.hess_rel_error)
            .max(self.param_rel_error)
    }
}

pub fn relative_error(propagated: &[f64], reference: &[f64], noise: f64) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = propagated
        .iter()
        .zip(reference)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    diff / inf(propagated).max(inf(reference)).max(noise)
}

fn roundoff_floor(scale: f64, h: f64, power: i32) -> f64 {
    1e3 * f64::EPSILON * (1.0 + scale.abs()) / libm::pow(h, power as f64)
}

/// Fixed linear functional of value, gradient and Hessian, so a single
/// parameter-gradient check exercises every forward channel.
struct ProbeLoss {
    dim: usize,
}

impl LossFunctional for ProbeLoss {
    fn order(&self) -> Order {
        Order::Hessian
    }

    fn evaluate(
        &self,
        out: &BatchOutputs,
        _points: &SampleBatch,
        mut seed: Option<&mut BatchAdjoint>,
    ) -> Result<f64> {
        let d = self.dim;
        let mut total = 0.0;
        for b in 0..out.len() {
            total += out.value(b);
            let g = out.grad(b);
            let h = out.hess(b);
            for i in 0..d {
                total += g[i] / (i + 1) as f64;
                for j in 0..d {
                    total += h[i * d + j] / (1 + i + 2 * j) as f64;
                }
            }
            if !total.is_finite() {
                return Err(Error::NonFiniteLoss { sample: b });
            }
            if let Some(s) = seed.as_deref_mut() {
                s.value[b] = 1.0;
                for i in 0..d {
                    s.grad_mut(b)[i] = 1.0 / (i + 1) as f64;
                    for j in 0..d {
                        s.hess_mut(b)[i * d + j] = 1.0 / (1 + i + 2 * j) as f64;
                    }
                }
            }
        }
        Ok(total)
    }
}

fn eval_value<F: ScalarField>(field: &F, params: &[f64], x: &[f64]) -> Result<f64> {
    Ok(eval_batch(field, params, &SampleBatch::single(x), Order::Value)?.values[0])
}

/// Compares propagated gradient, Hessian and parameter gradient at `x`
/// against central differences with step `h`.
pub fn finite_diff_check<F: ScalarField>(
    field: &F,
    params: &[f64],
    x: &[f64],
    h: f64,
) -> Result<DiffReport> {
    if !(h > 0.0) {
        return Err(Error::InvalidStep(h));
    }
    let d = field.input_dim();
    let bundle = eval_with_derivatives(field, params, x)?;
    let u0 = bundle.value;

    let mut xp = x.to_vec();
    let mut fd_grad = vec![0.0; d];
    for i in 0..d {
        xp[i] = x[i] + h;
        let up = eval_value(field, params, &xp)?;
        xp[i] = x[i] - h;
        let um = eval_value(field, params, &xp)?;
        xp[i] = x[i];
        fd_grad[i] = (up - um) / (2.0 * h);
    }

    let mut fd_hess = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let corner = |si: f64, sj: f64| -> Result<f64> {
                let mut y = x.to_vec();
                y[i] += si * h;
                y[j] += sj * h;
                eval_value(field, params, &y)
            };
            let v = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)?
                + corner(-1.0, -1.0)?)
                / (4.0 * h * h);
            fd_hess[i * d + j] = v;
            fd_hess[j * d + i] = v;
        }
    }

    let probe = ProbeLoss { dim: d };
    let batch = SampleBatch::single(x);
    let param_rel_error = finite_diff_loss_check(&probe, field, params, &batch, h)?;

    Ok(DiffReport {
        grad_rel_error: relative_error(&bundle.grad, &fd_grad, roundoff_floor(u0, h, 1)),
        hess_rel_error: relative_error(&bundle.hess, &fd_hess, roundoff_floor(u0, h, 2)),
        param_rel_error,
    })
}

/// Relative error of the propagated parameter gradient of `loss` against
/// central differences over every parameter.
pub fn finite_diff_loss_check<F: ScalarField>(
    loss: &dyn LossFunctional,
    field: &F,
    params: &[f64],
    batch: &SampleBatch,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidStep(h));
    }
    let (l0, grad) = value_and_param_gradient(loss, field, params, batch)?;
    let mut p = params.to_vec();
    let mut fd = vec![0.0; params.len()];
    for k in 0..params.len() {
        p[k] = params[k] + h;
        let lp = loss_value(loss, field, &p, batch)?;
        p[k] = params[k] - h;
        let lm = loss_value(loss, field, &p, batch)?;
        p[k] = params[k];
        fd[k] = (lp - lm) / (2.0 * h);
    }
    Ok(relative_error(&grad, &fd, roundoff_floor(l0, h, 1)))
}

#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with four interleaved partial sums; the summation order is
/// fixed, so results do not depend on the build's vector width.
#[inline]
pub(crate) fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
