//! Map quality against a reference problem, and 2-d grid exports.

use alloc::vec::Vec;

use crate::batch::SampleBatch;
use crate::density::DensitySpec;
use crate::diff::Order;
use crate::error::{Error, Result};
use crate::icnn::Icnn;
use crate::reference::{mean_sq_distance, ReferenceMap, ReferencePair};
use crate::rng::derive_seed;
use crate::train::{w2_estimate, EVAL_CHUNK};

/// Smallest evaluation budget accepted by [`l2_uvp`].
pub const MIN_EVAL_SAMPLES: usize = 1000;

/// Default number of evaluation samples.
pub const DEFAULT_EVAL_SAMPLES: usize = 100_000;

/// A map `R^d -> R^d` evaluated on batches.
pub trait TransportMap {
    fn dim(&self) -> usize;
    fn map_batch(&self, xs: &SampleBatch) -> Result<SampleBatch>;
}

impl TransportMap for Icnn {
    fn dim(&self) -> usize {
        Icnn::dim(self)
    }

    fn map_batch(&self, xs: &SampleBatch) -> Result<SampleBatch> {
        self.transport_batch(xs)
    }
}

impl TransportMap for ReferenceMap {
    fn dim(&self) -> usize {
        ReferenceMap::dim(self)
    }

    fn map_batch(&self, xs: &SampleBatch) -> Result<SampleBatch> {
        self.apply_batch(xs)
    }
}

/// Pointwise closure as a [`TransportMap`].
pub struct FnMap<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &mut [f64])> TransportMap for FnMap<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn map_batch(&self, xs: &SampleBatch) -> Result<SampleBatch> {
        let mut out = SampleBatch::zeros(self.dim, xs.len());
        for (b, x) in xs.rows().enumerate() {
            (self.f)(x, out.row_mut(b));
        }
        Ok(out)
    }
}

/// `100 E|T(x) - T*(x)|^2 / Var(nu)` over `n` source samples, where `Var(nu)`
/// is the trace of the target covariance (exact when known, otherwise from
/// `n` target samples on a derived seed).
pub fn l2_uvp(map: &dyn TransportMap, reference: &ReferencePair, n: usize, seed: u64) -> Result<f64> {
    if n < MIN_EVAL_SAMPLES {
        return Err(Error::TooFewSamples {
            min: MIN_EVAL_SAMPLES,
            got: n,
        });
    }
    if map.dim() != reference.dim() {
        return Err(Error::DimensionMismatch {
            expected: reference.dim(),
            got: map.dim(),
        });
    }
    let variance = reference.target_total_variance(n, derive_seed(seed, 1))?;
    if !(variance > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let xs = reference.source.sample(n, seed)?;
    let mut total = 0.0;
    for start in (0..n).step_by(EVAL_CHUNK) {
        let chunk = xs.slice(start, (start + EVAL_CHUNK).min(n));
        let a = map.map_batch(&chunk)?;
        let b = reference.true_map.apply_batch(&chunk)?;
        total += mean_sq_distance(&a, &b) * chunk.len() as f64;
    }
    Ok(100.0 * total / n as f64 / variance)
}

/// `100 |est - truth| / truth`.
pub fn w2_percent_error(w2_est: f64, w2_true: f64) -> Result<f64> {
    if !(w2_true > 0.0) {
        return Err(Error::ZeroReference);
    }
    Ok(100.0 * (w2_est - w2_true).abs() / w2_true)
}

/// Evaluation of one trained map against its reference.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub l2_uvp: f64,
    pub w2_est: f64,
    pub w2_true: Option<f64>,
    pub w2_pct_error: Option<f64>,
    pub w2sq_est: f64,
    pub w2sq_true: Option<f64>,
    pub w2sq_pct_error: Option<f64>,
    /// Monte Carlo budget behind `w2_true`, when it is not exact.
    pub w2_true_samples: Option<usize>,
    pub w2_true_seed: Option<u64>,
    pub n_eval: usize,
    pub eval_seed: u64,
    pub train_seed: u64,
    pub inverse_consistency: Option<f64>,
    pub wall_time: f64,
}

/// Evaluates `map` on `n` source samples. UVP and the distance estimate use
/// independent streams derived from `eval_seed`.
pub fn evaluate(
    map: &Icnn,
    reference: &ReferencePair,
    n: usize,
    eval_seed: u64,
    train_seed: u64,
) -> Result<EvalReport> {
    let uvp = l2_uvp(map, reference, n, derive_seed(eval_seed, 2))?;
    let (w2sq, w2) = w2_estimate(map, &reference.source, n, derive_seed(eval_seed, 3))?;
    let truth = reference.true_w2;
    let pct = |est: f64, t: f64| w2_percent_error(est, t).ok();
    Ok(EvalReport {
        l2_uvp: uvp,
        w2_est: w2,
        w2_true: truth.map(|t| t.distance),
        w2_pct_error: truth.and_then(|t| pct(w2, t.distance)),
        w2sq_est: w2sq,
        w2sq_true: truth.map(|t| t.squared),
        w2sq_pct_error: truth.and_then(|t| pct(w2sq, t.squared)),
        w2_true_samples: truth.and_then(|t| t.mc_samples),
        w2_true_seed: truth.and_then(|t| t.mc_seed),
        n_eval: n,
        eval_seed,
        train_seed,
        inverse_consistency: None,
        wall_time: 0.0,
    })
}

/// Rectangle `[lo, hi]` sampled at `res` nodes per axis, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridSpec {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub res: [usize; 2],
}

impl GridSpec {
    pub fn square(half_width: f64, res: usize) -> Self {
        Self {
            lo: [-half_width; 2],
            hi: [half_width; 2],
            res: [res; 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0..2).all(|k| self.res[k] >= 2 && self.hi[k] > self.lo[k] && self.lo[k].is_finite() && self.hi[k].is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(alloc::string::String::from(
                "grid needs finite bounds with lo < hi and at least 2 nodes per axis",
            )))
        }
    }

    pub fn step(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / (self.res[axis] - 1) as f64
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.res[axis] {
            self.hi[axis]
        } else {
            self.lo[axis] + i as f64 * self.step(axis)
        }
    }

    pub fn len(&self) -> usize {
        self.res[0] * self.res[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid nodes, `x` varying fastest.
    pub fn nodes(&self) -> SampleBatch {
        let mut out = SampleBatch::zeros(2, self.len());
        for j in 0..self.res[1] {
            for i in 0..self.res[0] {
                let row = out.row_mut(j * self.res[0] + i);
                row[0] = self.coord(0, i);
                row[1] = self.coord(1, j);
            }
        }
        out
    }
}

/// Scalar values on a [`GridSpec`], `x` varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.grid.res[0] + i]
    }

    /// Trapezoid-rule integral over the rectangle.
    pub fn integral(&self) -> f64 {
        let [nx, ny] = self.grid.res;
        let mut total = 0.0;
        for j in 0..ny {
            let wy = if j == 0 || j + 1 == ny { 0.5 } else { 1.0 };
            for i in 0..nx {
                let wx = if i == 0 || i + 1 == nx { 0.5 } else { 1.0 };
                total += wx * wy * self.at(i, j);
            }
        }
        total * self.grid.step(0) * self.grid.step(1)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Vector values (two per node) on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridVectorField {
    pub grid: GridSpec,
    /// Node-major pairs `(T_x, T_y)`.
    pub values: Vec<f64>,
}

impl GridVectorField {
    pub fn at(&self, i: usize, j: usize) -> [f64; 2] {
        let k = 2 * (j * self.grid.res[0] + i);
        [self.values[k], self.values[k + 1]]
    }
}

/// Density values `exp(log p)` at every node.
pub fn grid_density(spec: &DensitySpec, grid: &GridSpec) -> Result<GridField> {
    if spec.dim() != 2 {
        return Err(Error::GridDimension(spec.dim()));
    }
    grid.validate()?;
    let nodes = grid.nodes();
    let mut values = Vec::with_capacity(nodes.len());
    for start in (0..nodes.len()).step_by(EVAL_CHUNK) {
        let chunk = nodes.slice(start, (start + EVAL_CHUNK).min(nodes.len()));
        values.extend(spec.log_density_batch(&chunk)?.into_iter().map(libm::exp));
    }
    Ok(GridField { grid: *grid, values })
}

/// The map `grad u` at every node.
pub fn grid_map(u: &Icnn, grid: &GridSpec) -> Result<GridVectorField> {
    if u.dim() != 2 {
        return Err(Error::GridDimension(u.dim()));
    }
    grid.validate()?;
    let nodes = grid.nodes();
    let mut values = Vec::with_capacity(2 * nodes.len());
    for start in (0..nodes.len()).step_by(EVAL_CHUNK) {
        let chunk = nodes.slice(start, (start + EVAL_CHUNK).min(nodes.len()));
        values.extend_from_slice(&u.eval_batch(&chunk, Order::Gradient)?.grads);
    }
    Ok(GridVectorField { grid: *grid, values })
}
