//! Input-convex network potential.
//!
//! ```text
//! z_0     = s(Wx_0 x + b_0)
//! z_l     = s(Wz_l z_{l-1} + Wx_l x + b_l)          l = 1..L-1
//! u(x)    = a . z_{L-1} + c . x + c_0 + (eps/2)|x|^2
//! ```
//!
//! `s` is the powered softplus, `Wz_l >= 0` and `a >= 0`. Each unit is then a
//! convex nondecreasing function of a convex function of `x`, so `u` is
//! convex. `eps` is an optional fixed strict-convexity floor.
//!
//! Input derivatives are propagated forward layer by layer: every unit carries
//! its value, its input gradient and its packed input Hessian
//! (`d(d+1)/2` entries). For a unit `z = s(p)`:
//!
//! ```text
//! dz  = s'(p) dp
//! d2z = s''(p) dp dp^T + s'(p) d2p
//! ```
//!
//! The reverse sweep differentiates that recurrence, which needs `s'''`.
//! Hidden states are stored unit-major with the batch and channels contiguous,
//! so the layer products are long AXPYs and dot products.

use alloc::vec;
use alloc::vec::Vec;

use crate::activation::{SoftplusPower, DEFAULT_ALPHA};
use crate::batch::SampleBatch;
use crate::diff::{
    axpy, dot4, packed_pairs, BatchAdjoint, BatchOutputs, Order, ParamLayout,
    ParamRole, ParamVector, ScalarField,
};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Architecture of an input-convex network. Implements [`ScalarField`] over
/// a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct IcnnArch {
    dim: usize,
    widths: Vec<usize>,
    activation: SoftplusPower,
    convexity_floor: f64,
    layout: ParamLayout,
    offsets: Offsets,
}

#[derive(Debug, Clone, PartialEq)]
struct Offsets {
    hidden: Vec<Option<usize>>,
    input: Vec<usize>,
    bias: Vec<usize>,
    readout_hidden: usize,
    readout_input: usize,
    readout_bias: usize,
}

impl IcnnArch {
    pub fn new(dim: usize, widths: &[usize], alpha: f64, convexity_floor: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::InvalidWidths);
        }
        let activation = SoftplusPower::new(alpha)?;
        if !(convexity_floor >= 0.0) || !convexity_floor.is_finite() {
            return Err(Error::InvalidConfig(alloc::format!(
                "convexity floor must be finite and non-negative, got {convexity_floor}"
            )));
        }
        let mut layout = ParamLayout::new();
        let mut hidden = Vec::new();
        let mut input = Vec::new();
        let mut bias = Vec::new();
        for (l, &w) in widths.iter().enumerate() {
            hidden.push(if l > 0 {
                Some(layout.push(l, ParamRole::HiddenWeights, w, widths[l - 1]))
            } else {
                None
            });
            input.push(layout.push(l, ParamRole::InputWeights, w, dim));
            bias.push(layout.push(l, ParamRole::Bias, w, 1));
        }
        let last = widths.len();
        let readout_hidden = layout.push(last, ParamRole::ReadoutHidden, 1, widths[last - 1]);
        let readout_input = layout.push(last, ParamRole::ReadoutInput, 1, dim);
        let readout_bias = layout.push(last, ParamRole::ReadoutBias, 1, 1);
        Ok(Self {
            dim,
            widths: widths.to_vec(),
            activation,
            convexity_floor,
            layout,
            offsets: Offsets {
                hidden,
                input,
                bias,
                readout_hidden,
                readout_input,
                readout_bias,
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn alpha(&self) -> f64 {
        self.activation.alpha
    }

    pub fn convexity_floor(&self) -> f64 {
        self.convexity_floor
    }

    pub fn with_convexity_floor(&self, eps: f64) -> Result<Self> {
        Self::new(self.dim, &self.widths, self.alpha(), eps)
    }

    pub fn num_params(&self) -> usize {
        self.layout.len()
    }
}

/// Recorded forward pass of an [`IcnnArch`].
pub struct IcnnTape {
    order: Order,
    n: usize,
    channels: usize,
    x: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    /// `[s', s'', s''']` per (unit, sample), only at Hessian order; at lower
    /// orders only `s'` (and `s''` for gradients) are meaningful.
    slopes: Vec<Vec<[f64; 3]>>,
    out: BatchOutputs,
}

impl ScalarField for IcnnArch {
    type Tape = IcnnTape;

    fn input_dim(&self) -> usize {
        self.dim
    }

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    fn forward(&self, params: &[f64], xs: &SampleBatch, order: Order) -> Result<IcnnTape> {
        self.check_inputs(params, xs)?;
        let d = self.dim;
        let n = xs.len();
        let ch = order.channels(d);
        let row = n * ch;
        let pairs = packed_pairs(d);
        let x = xs.as_slice();

        let mut pre_all = Vec::with_capacity(self.depth());
        let mut post_all: Vec<Vec<f64>> = Vec::with_capacity(self.depth());
        let mut slopes_all = Vec::with_capacity(self.depth());

        for (l, &w) in self.widths.iter().enumerate() {
            let mut pre = vec![0.0; w * row];
            if let Some(off) = self.offsets.hidden[l] {
                let wp = self.widths[l - 1];
                let wz = &params[off..off + w * wp];
                let prev = &post_all[l - 1];
                for k in 0..w {
                    let dst = &mut pre[k * row..(k + 1) * row];
                    for j in 0..wp {
                        axpy(wz[k * wp + j], &prev[j * row..(j + 1) * row], dst);
                    }
                }
            }
            let wx = &params[self.offsets.input[l]..self.offsets.input[l] + w * d];
            let bias = &params[self.offsets.bias[l]..self.offsets.bias[l] + w];
            for k in 0..w {
                let wk = &wx[k * d..(k + 1) * d];
                for b in 0..n {
                    let base = k * row + b * ch;
                    let xb = &x[b * d..(b + 1) * d];
                    let mut s = bias[k];
                    for i in 0..d {
                        s += wk[i] * xb[i];
                    }
                    pre[base] += s;
                    if order >= Order::Gradient {
                        for i in 0..d {
                            pre[base + 1 + i] += wk[i];
                        }
                    }
                }
            }

            let mut post = vec![0.0; w * row];
            let mut slopes = vec![[0.0; 3]; w * n];
            for k in 0..w {
                for b in 0..n {
                    let base = k * row + b * ch;
                    let p = pre[base];
                    if order == Order::Value {
                        let v = self.activation.value(p);
                        if !v.is_finite() {
                            return Err(Error::NonFiniteActivation { layer: l });
                        }
                        post[base] = v;
                        continue;
                    }
                    let [f0, f1, f2, f3] = self.activation.derivatives(p);
                    if !(f0.is_finite() && f1.is_finite() && f2.is_finite() && f3.is_finite()) {
                        return Err(Error::NonFiniteActivation { layer: l });
                    }
                    slopes[k * n + b] = [f1, f2, f3];
                    post[base] = f0;
                    for i in 0..d {
                        post[base + 1 + i] = f1 * pre[base + 1 + i];
                    }
                    if order == Order::Hessian {
                        let jb = base + 1;
                        let hb = base + 1 + d;
                        for (q, &(i, j)) in pairs.iter().enumerate() {
                            post[hb + q] = f2 * pre[jb + i] * pre[jb + j] + f1 * pre[hb + q];
                        }
                    }
                }
            }
            pre_all.push(pre);
            post_all.push(post);
            slopes_all.push(slopes);
        }

        let last = self.depth() - 1;
        let wl = self.widths[last];
        let a = &params[self.offsets.readout_hidden..self.offsets.readout_hidden + wl];
        let c = &params[self.offsets.readout_input..self.offsets.readout_input + d];
        let c0 = params[self.offsets.readout_bias];
        let eps = self.convexity_floor;
        let top = &post_all[last];

        let mut out = BatchOutputs::new(order, d, n);
        let mut acc = vec![0.0; row];
        for k in 0..wl {
            axpy(a[k], &top[k * row..(k + 1) * row], &mut acc);
        }
        for b in 0..n {
            let xb = &x[b * d..(b + 1) * d];
            let base = b * ch;
            let mut v = acc[base] + c0;
            for i in 0..d {
                v += c[i] * xb[i] + 0.5 * eps * xb[i] * xb[i];
            }
            out.values[b] = v;
            if order >= Order::Gradient {
                for i in 0..d {
                    out.grads[b * d + i] = acc[base + 1 + i] + c[i] + eps * xb[i];
                }
            }
            if order == Order::Hessian {
                let h = &mut out.hess[b * d * d..(b + 1) * d * d];
                for (q, &(i, j)) in pairs.iter().enumerate() {
                    let mut v = acc[base + 1 + d + q];
                    if i == j {
                        v += eps;
                    }
                    h[i * d + j] = v;
                    h[j * d + i] = v;
                }
            }
        }
        if out.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation { layer: self.depth() });
        }

        Ok(IcnnTape {
            order,
            n,
            channels: ch,
            x: x.to_vec(),
            pre: pre_all,
            post: post_all,
            slopes: slopes_all,
            out,
        })
    }

    fn outputs<'t>(&self, tape: &'t IcnnTape) -> &'t BatchOutputs {
        &tape.out
    }

    fn backward(
        &self,
        params: &[f64],
        tape: &IcnnTape,
        seed: &BatchAdjoint,
        param_grad: &mut [f64],
        mut input_grad: Option<&mut [f64]>,
    ) {
        let d = self.dim;
        let n = tape.n;
        let ch = tape.channels;
        let row = n * ch;
        let order = tape.order.min(seed.order);
        let pairs = packed_pairs(d);
        let x = &tape.x;
        let eps = self.convexity_floor;

        let mut seeds = vec![0.0; row];
        for b in 0..n {
            seed.packed_seed(b, &pairs, &mut seeds[b * ch..(b + 1) * ch]);
        }
        if order < tape.order {
            // seed carries fewer channels than the tape; zero the extra ones
            let used = order.channels(d);
            for b in 0..n {
                seeds[b * ch + used..(b + 1) * ch].iter_mut().for_each(|v| *v = 0.0);
            }
        }

        let last = self.depth() - 1;
        let wl = self.widths[last];
        let oa = self.offsets.readout_hidden;
        let oc = self.offsets.readout_input;
        let a = &params[oa..oa + wl];
        let c = &params[oc..oc + d];
        let top = &tape.post[last];
        for k in 0..wl {
            param_grad[oa + k] += dot4(&top[k * row..(k + 1) * row], &seeds);
        }
        for b in 0..n {
            let ub = seed.value[b];
            param_grad[self.offsets.readout_bias] += ub;
            let xb = &x[b * d..(b + 1) * d];
            for i in 0..d {
                let gb = if order >= Order::Gradient {
                    seed.grad[b * d + i]
                } else {
                    0.0
                };
                param_grad[oc + i] += ub * xb[i] + gb;
                if let Some(xg) = input_grad.as_deref_mut() {
                    xg[b * d + i] += ub * (c[i] + eps * xb[i]) + eps * gb;
                }
            }
        }

        // adjoint of the current layer's post-activation state
        let mut zbar = vec![0.0; wl * row];
        for k in 0..wl {
            axpy(a[k], &seeds, &mut zbar[k * row..(k + 1) * row]);
        }

        for l in (0..self.depth()).rev() {
            let w = self.widths[l];
            let pre = &tape.pre[l];
            let slopes = &tape.slopes[l];
            let mut pbar = vec![0.0; w * row];
            for k in 0..w {
                for b in 0..n {
                    let base = k * row + b * ch;
                    let zb = &zbar[base..base + ch];
                    let pb = &mut pbar[base..base + ch];
                    let [f1, f2, f3] = if tape.order == Order::Value {
                        [self.activation.derivatives(pre[base])[1], 0.0, 0.0]
                    } else {
                        slopes[k * n + b]
                    };
                    let mut p_adj = zb[0] * f1;
                    if order >= Order::Gradient {
                        for i in 0..d {
                            let jv = pre[base + 1 + i];
                            p_adj += f2 * zb[1 + i] * jv;
                            pb[1 + i] = f1 * zb[1 + i];
                        }
                    }
                    if order == Order::Hessian {
                        let jb = base + 1;
                        let hb = base + 1 + d;
                        for (q, &(i, j)) in pairs.iter().enumerate() {
                            let zh = zb[1 + d + q];
                            if zh == 0.0 {
                                continue;
                            }
                            let (ji, jj) = (pre[jb + i], pre[jb + j]);
                            p_adj += zh * (f3 * ji * jj + f2 * pre[hb + q]);
                            pb[1 + i] += f2 * zh * jj;
                            pb[1 + j] += f2 * zh * ji;
                            pb[1 + d + q] = f1 * zh;
                        }
                    }
                    pb[0] = p_adj;
                }
            }

            let ob = self.offsets.bias[l];
            let ox = self.offsets.input[l];
            let wx = &params[ox..ox + w * d];
            for k in 0..w {
                for b in 0..n {
                    let base = k * row + b * ch;
                    let pv = pbar[base];
                    param_grad[ob + k] += pv;
                    let xb = &x[b * d..(b + 1) * d];
                    for i in 0..d {
                        let mut g = pv * xb[i];
                        if order >= Order::Gradient {
                            g += pbar[base + 1 + i];
                        }
                        param_grad[ox + k * d + i] += g;
                    }
                    if let Some(xg) = input_grad.as_deref_mut() {
                        for i in 0..d {
                            xg[b * d + i] += pv * wx[k * d + i];
                        }
                    }
                }
            }

            if let Some(oz) = self.offsets.hidden[l] {
                let wp = self.widths[l - 1];
                let wz = &params[oz..oz + w * wp];
                let prev = &tape.post[l - 1];
                let mut prev_bar = vec![0.0; wp * row];
                for k in 0..w {
                    let pk = &pbar[k * row..(k + 1) * row];
                    for j in 0..wp {
                        param_grad[oz + k * wp + j] += dot4(pk, &prev[j * row..(j + 1) * row]);
                        axpy(wz[k * wp + j], pk, &mut prev_bar[j * row..(j + 1) * row]);
                    }
                }
                zbar = prev_bar;
            }
        }
    }
}

/// Weight initialization scale used by [`Icnn::init`].
pub const DEFAULT_INIT_SCALE: f64 = 1.0;

/// An input-convex network with concrete weights: the Brenier potential.
#[derive(Debug, Clone, PartialEq)]
pub struct Icnn {
    arch: IcnnArch,
    params: ParamVector,
}

impl Icnn {
    pub fn from_parts(arch: IcnnArch, values: Vec<f64>) -> Result<Self> {
        let params = ParamVector::new(arch.layout.clone(), values)?;
        Ok(Self { arch, params })
    }

    pub fn zeros(arch: IcnnArch) -> Self {
        let params = ParamVector::zeros(arch.layout.clone());
        Self { arch, params }
    }

    /// Random initialization with [`DEFAULT_INIT_SCALE`] and the default activation exponent.
    pub fn init(dim: usize, widths: &[usize], seed: u64) -> Result<Self> {
        let arch = IcnnArch::new(dim, widths, DEFAULT_ALPHA, 0.0)?;
        Ok(Self::init_arch(arch, seed, DEFAULT_INIT_SCALE))
    }

    /// Draws every weight from a zero-mean normal and scales it by
    /// `scale / sqrt(d)` for input weights and `scale / fan_in` for
    /// non-negative (hidden and read-out) weights, which take the absolute
    /// value of their draw. The `1 / fan_in` scaling keeps hidden activations
    /// of order one at any width. Biases start at zero.
    pub fn init_arch(arch: IcnnArch, seed: u64, scale: f64) -> Self {
        let mut rng = rng::seeded(seed);
        let mut net = Self::zeros(arch);
        let d = net.arch.dim as f64;
        let blocks = net.params.layout.blocks().to_vec();
        for block in blocks {
            let range = block.range();
            let fan_in = block.cols as f64;
            for v in &mut net.params.values[range] {
                let z = rng::standard_normal(&mut rng);
                *v = match block.role {
                    ParamRole::HiddenWeights | ParamRole::ReadoutHidden => scale * z.abs() / fan_in,
                    ParamRole::InputWeights | ParamRole::ReadoutInput => {
                        scale * z / libm::sqrt(d)
                    }
                    _ => 0.0,
                };
            }
        }
        net
    }

    pub fn init_with(
        dim: usize,
        widths: &[usize],
        alpha: f64,
        convexity_floor: f64,
        seed: u64,
        scale: f64,
    ) -> Result<Self> {
        let arch = IcnnArch::new(dim, widths, alpha, convexity_floor)?;
        Ok(Self::init_arch(arch, seed, scale))
    }

    pub fn arch(&self) -> &IcnnArch {
        &self.arch
    }

    pub fn dim(&self) -> usize {
        self.arch.dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params.values
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params.values
    }

    pub fn param_vector(&self) -> &ParamVector {
        &self.params
    }

    pub fn block(&self, layer: usize, role: ParamRole) -> Option<&[f64]> {
        self.params.block(layer, role)
    }

    pub fn block_mut(&mut self, layer: usize, role: ParamRole) -> Option<&mut [f64]> {
        self.params.block_mut(layer, role)
    }

    /// Same weights with a different strict-convexity floor.
    pub fn with_convexity_floor(&self, eps: f64) -> Result<Self> {
        Ok(Self {
            arch: self.arch.with_convexity_floor(eps)?,
            params: self.params.clone(),
        })
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        let out = crate::diff::eval_batch(&self.arch, self.params(), &SampleBatch::single(x), Order::Value)?;
        Ok(out.values[0])
    }

    pub fn eval_batch(&self, xs: &SampleBatch, order: Order) -> Result<BatchOutputs> {
        crate::diff::eval_batch(&self.arch, self.params(), xs, order)
    }

    /// Candidate transport map `grad u(x)`.
    pub fn transport_map(&self, x: &[f64]) -> Result<Vec<f64>> {
        let out = self.eval_batch(&SampleBatch::single(x), Order::Gradient)?;
        Ok(out.grads)
    }

    pub fn transport_batch(&self, xs: &SampleBatch) -> Result<SampleBatch> {
        Ok(self.eval_batch(xs, Order::Gradient)?.grad_batch())
    }

    /// Clamps every constrained weight to `max(w, 0)`.
    pub fn project_nonneg(&self) -> Self {
        let mut out = self.clone();
        out.project_nonneg_in_place();
        out
    }

    pub fn project_nonneg_in_place(&mut self) {
        project_nonneg_slice(&self.arch.layout, &mut self.params.values);
    }

    pub fn constraints_hold(&self) -> bool {
        self.params.layout.blocks().iter().all(|b| {
            !b.role.is_constrained() || self.params.values[b.range()].iter().all(|&v| v >= 0.0)
        })
    }
}

pub fn project_nonneg_slice(layout: &ParamLayout, values: &mut [f64]) {
    for b in layout.blocks() {
        if b.role.is_constrained() {
            for v in &mut values[b.range()] {
                *v = v.max(0.0);
            }
        }
    }
}

/// Draws a uniform point in `[-r, r]^d`.
pub fn uniform_point(rng: &mut Rng, d: usize, r: f64) -> Vec<f64> {
    (0..d).map(|_| rng::uniform(rng, -r, r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{eval_with_derivatives, finite_diff_check};
    use crate::linalg;
    use approx::assert_relative_eq;

    fn small_net(d: usize, widths: &[usize], seed: u64) -> Icnn {
        let mut net = Icnn::init(d, widths, seed).unwrap();
        // non-zero biases so every parameter role is exercised
        let mut rng = rng::seeded(seed ^ 77);
        for l in 0..widths.len() {
            for v in net.block_mut(l, ParamRole::Bias).unwrap() {
                *v = rng::uniform(&mut rng, -0.5, 0.5);
            }
        }
        net
    }

    #[test]
    fn shapes_for_three_layer_128() {
        let net = Icnn::init(2, &[128, 128, 128], 3).unwrap();
        let lay = net.arch().layout();
        assert!(lay.block(0, ParamRole::HiddenWeights).is_none());
        let wz1 = lay.block(1, ParamRole::HiddenWeights).unwrap();
        assert_eq!((wz1.rows, wz1.cols), (128, 128));
        for l in 0..3 {
            let wx = lay.block(l, ParamRole::InputWeights).unwrap();
            assert_eq!((wx.rows, wx.cols), (128, 2));
        }
        let ro = lay.block(3, ParamRole::ReadoutHidden).unwrap();
        assert_eq!((ro.rows, ro.cols), (1, 128));
        let expected = 128 * 2 + 128 + 2 * (128 * 128 + 128 * 2 + 128) + 128 + 2 + 1;
        assert_eq!(lay.len(), expected);
    }

    #[test]
    fn init_is_reproducible_and_feasible() {
        let a = Icnn::init(3, &[16, 16], 9).unwrap();
        let b = Icnn::init(3, &[16, 16], 9).unwrap();
        let c = Icnn::init(3, &[16, 16], 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.constraints_hold());
    }

    #[test]
    fn rejects_bad_widths() {
        assert_eq!(Icnn::init(2, &[], 0).unwrap_err(), Error::InvalidWidths);
        assert_eq!(Icnn::init(2, &[4, 0], 0).unwrap_err(), Error::InvalidWidths);
        assert_eq!(Icnn::init(0, &[4], 0).unwrap_err(), Error::ZeroDimension);
    }

    #[test]
    fn single_unit_matches_activation() {
        let arch = IcnnArch::new(1, &[1], 1.1, 0.0).unwrap();
        let mut net = Icnn::zeros(arch);
        net.block_mut(0, ParamRole::InputWeights).unwrap()[0] = 1.0;
        net.block_mut(1, ParamRole::ReadoutHidden).unwrap()[0] = 1.0;
        let v = net.forward(&[0.0]).unwrap();
        assert_eq!(v, crate::activation::softplus_alpha(0.0, 1.1));
    }

    #[test]
    fn constant_network() {
        let arch = IcnnArch::new(2, &[4, 4], 1.1, 0.0).unwrap();
        let mut net = Icnn::zeros(arch);
        net.block_mut(2, ParamRole::ReadoutBias).unwrap()[0] = 1.5;
        let v0 = net.forward(&[0.0, 0.0]).unwrap();
        let v1 = net.forward(&[3.0, -7.0]).unwrap();
        assert_eq!(v0, 1.5);
        assert_eq!(v0, v1);
        assert_eq!(net.transport_map(&[2.0, 1.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn projection_only_touches_constrained_blocks() {
        let mut net = Icnn::init(2, &[3, 3], 1).unwrap();
        net.block_mut(1, ParamRole::HiddenWeights).unwrap()[0] = -0.3;
        net.block_mut(1, ParamRole::HiddenWeights).unwrap()[1] = 0.7;
        net.block_mut(1, ParamRole::InputWeights).unwrap()[0] = -0.3;
        net.block_mut(2, ParamRole::ReadoutHidden).unwrap()[0] = -1.0;
        let p = net.project_nonneg();
        assert_eq!(p.block(1, ParamRole::HiddenWeights).unwrap()[0], 0.0);
        assert_eq!(p.block(1, ParamRole::HiddenWeights).unwrap()[1], 0.7);
        assert_eq!(p.block(1, ParamRole::InputWeights).unwrap()[0], -0.3);
        assert_eq!(p.block(2, ParamRole::ReadoutHidden).unwrap()[0], 0.0);
        assert!(p.constraints_hold());
        assert_eq!(p.project_nonneg(), p);
    }

    #[test]
    fn hessian_is_symmetric_and_psd() {
        let net = small_net(3, &[8, 8, 8], 4);
        let mut rng = rng::seeded(1);
        for _ in 0..50 {
            let x = uniform_point(&mut rng, 3, 3.0);
            let b = eval_with_derivatives(net.arch(), net.params(), &x).unwrap();
            assert!(linalg::is_symmetric(&b.hess, 3, 0.0));
            assert!(linalg::min_eigenvalue(&b.hess, 3) >= -1e-10);
        }
    }

    #[test]
    fn finite_differences_agree() {
        for seed in 0..5 {
            let net = small_net(3, &[8, 6, 5], seed);
            let mut rng = rng::seeded(seed + 100);
            let x = uniform_point(&mut rng, 3, 2.0);
            let r = finite_diff_check(net.arch(), net.params(), &x, 1e-4).unwrap();
            assert!(r.grad_rel_error < 1e-4, "{r:?}");
            assert!(r.hess_rel_error < 1e-3, "{r:?}");
            assert!(r.param_rel_error < 1e-4, "{r:?}");
        }
    }

    #[test]
    fn convexity_floor_adds_quadratic() {
        let arch = IcnnArch::new(2, &[3], 1.1, 1.0).unwrap();
        let net = Icnn::zeros(arch);
        let b = eval_with_derivatives(net.arch(), net.params(), &[1.0, 2.0]).unwrap();
        assert_relative_eq!(b.value, 2.5);
        assert_eq!(b.grad, vec![1.0, 2.0]);
        assert_eq!(b.hess, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn batch_matches_pointwise() {
        let net = small_net(2, &[6, 6], 8);
        let xs = SampleBatch::from_rows(2, &[[0.1, 0.2], [-1.0, 2.0], [3.0, -0.5]]).unwrap();
        let all = net.eval_batch(&xs, Order::Hessian).unwrap();
        for b in 0..3 {
            let one = eval_with_derivatives(net.arch(), net.params(), xs.row(b)).unwrap();
            assert_eq!(one, all.bundle(b));
        }
    }

    #[test]
    fn overflow_is_reported_with_layer() {
        let mut net = Icnn::init(1, &[2, 2], 0).unwrap();
        for v in net.block_mut(1, ParamRole::HiddenWeights).unwrap() {
            *v = 1e300;
        }
        let err = net.forward(&[1.0]).unwrap_err();
        assert_eq!(err, Error::NonFiniteActivation { layer: 1 });
    }
}
