//! Training loops: identity pretraining, the main objective, and the inverse map.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::activation::DEFAULT_ALPHA;
use crate::batch::SampleBatch;
use crate::density::DensitySpec;
use crate::diff::{loss_value, value_and_param_gradient, LossFunctional, Order, ScalarField};
use crate::error::{Error, Result};
use crate::icnn::{project_nonneg_slice, Icnn, IcnnArch};
use crate::loss::{MatchLoss, NllLoss, ResidualLoss};
use crate::optim::{Adam, AdamConfig};
use crate::reference::mean_sq_distance;
use crate::rng::{self, derive_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LossKind {
    Residual,
    Likelihood,
}

/// Where residual collocation points come from.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case", tag = "kind"))]
pub enum Collocation {
    /// Fresh draws from the source density every iteration.
    Source,
    /// Uniform draws from `[-half_width, half_width]^d`.
    Box { half_width: f64 },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub seed: u64,
    pub learning_rate: f64,
    /// Step size at the last iteration as a fraction of `learning_rate`;
    /// the schedule is geometric in between.
    pub lr_decay: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub pretrain_iterations: usize,
    /// Mean squared identity mismatch that ends pretraining; `None` means `1e-3 d`.
    pub pretrain_tolerance: Option<f64>,
    pub loss: LossKind,
    pub collocation: Collocation,
    pub widths: Vec<usize>,
    pub alpha: f64,
    pub init_scale: f64,
    pub clamp_after_step: bool,
    pub convexity_floor: f64,
    pub inverse_iterations: usize,
    /// Minibatch size of the inverse fit; `None` means `batch_size`.
    pub inverse_batch_size: Option<usize>,
    /// Held-out points for the inverse-consistency and likelihood metrics.
    pub holdout_size: usize,
    /// Fraction of the samples withheld from likelihood training.
    pub holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            learning_rate: 1e-3,
            lr_decay: 1.0,
            iterations: 10_000,
            batch_size: 1024,
            pretrain_iterations: 2_000,
            pretrain_tolerance: None,
            loss: LossKind::Residual,
            collocation: Collocation::Source,
            widths: vec![128, 128, 128],
            alpha: DEFAULT_ALPHA,
            init_scale: 1.0,
            clamp_after_step: true,
            convexity_floor: 0.0,
            inverse_iterations: 10_000,
            inverse_batch_size: None,
            holdout_size: 4096,
            holdout_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(String::from(m)));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.inverse_batch_size == Some(0) {
            return bad("batch_size must be at least 1");
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return bad("widths must be non-empty and positive");
        }
        if !(self.alpha >= 1.0) {
            return bad("alpha must be at least 1");
        }
        if !(self.convexity_floor >= 0.0) || !(self.init_scale > 0.0) {
            return bad("convexity_floor must be >= 0 and init_scale > 0");
        }
        if let Some(t) = self.pretrain_tolerance {
            if !(t >= 0.0) {
                return bad("pretrain_tolerance must be >= 0");
            }
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must lie in [0, 1)");
        }
        if let Collocation::Box { half_width } = self.collocation {
            if !(half_width > 0.0) {
                return bad("collocation half_width must be positive");
            }
        }
        Ok(())
    }

    pub fn pretrain_tolerance_for(&self, d: usize) -> f64 {
        self.pretrain_tolerance.unwrap_or(1e-3 * d as f64)
    }

    fn step_size(&self, it: usize, total: usize) -> f64 {
        if total <= 1 || self.lr_decay == 1.0 {
            return self.learning_rate;
        }
        self.learning_rate * libm::pow(self.lr_decay, it as f64 / (total - 1) as f64)
    }
}

/// Source of elapsed seconds for history rows. The core crate has no clock.
pub trait Clock {
    fn elapsed_secs(&self) -> f64;
}

/// Reports zero elapsed time.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn elapsed_secs(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Phase {
    PretrainForward,
    Main,
    PretrainInverse,
    Inverse,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::PretrainForward => "pretrain_forward",
            Phase::Main => "main",
            Phase::PretrainInverse => "pretrain_inverse",
            Phase::Inverse => "inverse",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub phase: Phase,
    pub iteration: usize,
    pub loss: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PretrainReport {
    pub iterations: usize,
    /// Mean of the last [`PRETRAIN_WINDOW`] batch losses.
    pub final_loss: f64,
    pub tolerance: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPair {
    pub forward: Icnn,
    pub inverse: Icnn,
    pub history: Vec<HistoryEntry>,
    pub config: TrainConfig,
    pub forward_pretrain: PretrainReport,
    pub inverse_pretrain: PretrainReport,
    /// Held-out mean `|grad v(grad u(x)) - x|^2`.
    pub inverse_consistency: f64,
    /// Held-out negative log-likelihood (likelihood training only).
    pub heldout_nll: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("training failed: {error}")]
pub struct TrainFailure {
    #[source]
    pub error: Error,
    pub history: Vec<HistoryEntry>,
}

/// What the forward potential is fitted to.
#[derive(Debug, Clone, Copy)]
pub enum TrainData<'a> {
    /// Monge-Ampere residual between two evaluable densities.
    Densities {
        source: &'a DensitySpec,
        target: &'a DensitySpec,
    },
    /// Likelihood of samples pulled back onto a background density.
    Samples {
        samples: &'a SampleBatch,
        background: &'a DensitySpec,
    },
}

impl TrainData<'_> {
    pub fn dim(&self) -> usize {
        match self {
            TrainData::Densities { source, .. } => source.dim(),
            TrainData::Samples { samples, .. } => samples.dim(),
        }
    }
}

const STREAM_INIT_FORWARD: u64 = 1;
const STREAM_PRETRAIN_FORWARD: u64 = 2;
const STREAM_MAIN: u64 = 3;
const STREAM_INIT_INVERSE: u64 = 4;
const STREAM_PRETRAIN_INVERSE: u64 = 5;
const STREAM_INVERSE: u64 = 6;
const STREAM_HOLDOUT: u64 = 7;

struct Recorder<'c> {
    clock: &'c dyn Clock,
    history: Vec<HistoryEntry>,
}

impl Recorder<'_> {
    fn push(&mut self, phase: Phase, iteration: usize, loss: f64) {
        self.history.push(HistoryEntry {
            phase,
            iteration,
            loss,
            wall_time: self.clock.elapsed_secs(),
        });
    }
}

/// One Adam step on `net` for `loss` over `batch`, followed by the projection
/// onto the feasible set when requested.
fn descend(
    net: &mut Icnn,
    adam: &mut Adam,
    loss: &dyn LossFunctional,
    batch: &SampleBatch,
    lr: f64,
    clamp: bool,
) -> Result<f64> {
    let (value, grad) = value_and_param_gradient(loss, net.arch(), net.params(), batch)?;
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss { sample: 0 });
    }
    adam.step_with(net.params_mut(), &grad, lr);
    if clamp {
        net.project_nonneg_in_place();
    }
    Ok(value)
}

fn gaussian_batch(rng: &mut Rng, d: usize, n: usize) -> SampleBatch {
    let mut out = SampleBatch::zeros(d, n);
    for b in 0..n {
        for v in out.row_mut(b) {
            *v = rng::standard_normal(rng);
        }
    }
    out
}

/// Number of consecutive batch losses averaged for the pretraining stop test.
pub const PRETRAIN_WINDOW: usize = 10;

fn pretrain_loop(
    net: &mut Icnn,
    config: &TrainConfig,
    seed: u64,
    phase: Phase,
    rec: &mut Recorder<'_>,
) -> Result<PretrainReport> {
    let d = net.dim();
    let tolerance = config.pretrain_tolerance_for(d);
    let mut rng = rng::seeded(seed);
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        net.params().len(),
    );
    let mut report = PretrainReport {
        iterations: 0,
        final_loss: f64::NAN,
        tolerance,
        converged: config.pretrain_iterations == 0,
    };
    let mut window = [0.0; PRETRAIN_WINDOW];
    for it in 0..config.pretrain_iterations {
        let xs = gaussian_batch(&mut rng, d, config.batch_size);
        let loss = MatchLoss::new(&xs);
        let value = loss_value(&loss, net.arch(), net.params(), &xs)?;
        rec.push(phase, it, value);
        report.iterations = it;
        if !value.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                loss: value,
            });
        }
        window[it % PRETRAIN_WINDOW] = value;
        let seen = (it + 1).min(PRETRAIN_WINDOW);
        report.final_loss = window[..seen].iter().sum::<f64>() / seen as f64;
        if seen == PRETRAIN_WINDOW && report.final_loss <= tolerance {
            report.converged = true;
            return Ok(report);
        }
        let lr = config.step_size(it, config.pretrain_iterations);
        descend(net, &mut adam, &loss, &xs, lr, config.clamp_after_step)?;
        report.iterations = it + 1;
    }
    if !report.converged {
        log::warn!(
            "identity pretraining stopped at {} iterations with loss {:.3e} above tolerance {:.3e}",
            report.iterations,
            report.final_loss,
            tolerance
        );
    }
    Ok(report)
}

/// Fits `grad u ~ identity` in mean square over standard-Gaussian points.
///
/// Stops once the mean of the last [`PRETRAIN_WINDOW`] batch losses is at
/// most the configured tolerance, or after `pretrain_iterations` steps.
/// Missing the tolerance is not an error; the report says so.
pub fn pretrain_identity(net: &Icnn, config: &TrainConfig) -> Result<(Icnn, PretrainReport)> {
    config.validate()?;
    let mut out = net.clone();
    let clock = NoClock;
    let mut rec = Recorder {
        clock: &clock,
        history: Vec::new(),
    };
    let seed = derive_seed(config.seed, STREAM_PRETRAIN_FORWARD);
    let report = pretrain_loop(&mut out, config, seed, Phase::PretrainForward, &mut rec)?;
    Ok((out, report))
}

/// Monte Carlo estimate of `E |x - grad u(x)|^2` over `n` source samples,
/// returned with its square root.
pub fn w2_estimate(map: &Icnn, source: &DensitySpec, n: usize, seed: u64) -> Result<(f64, f64)> {
    let xs = source.sample(n, seed)?;
    let mut total = 0.0;
    for start in (0..n).step_by(EVAL_CHUNK) {
        let chunk = xs.slice(start, (start + EVAL_CHUNK).min(n));
        let ys = map.transport_batch(&chunk)?;
        total += mean_sq_distance(&chunk, &ys) * chunk.len() as f64;
    }
    let w2sq = if n == 0 { 0.0 } else { total / n as f64 };
    Ok((w2sq, libm::sqrt(w2sq)))
}

pub(crate) const EVAL_CHUNK: usize = 4096;

/// Mean `|grad v(grad u(x)) - x|^2` over `xs`.
pub fn inverse_consistency(u: &Icnn, v: &Icnn, xs: &SampleBatch) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for start in (0..xs.len()).step_by(EVAL_CHUNK) {
        let chunk = xs.slice(start, (start + EVAL_CHUNK).min(xs.len()));
        let back = v.transport_batch(&u.transport_batch(&chunk)?)?;
        total += mean_sq_distance(&chunk, &back) * chunk.len() as f64;
    }
    Ok(total / xs.len() as f64)
}

/// Mean negative pullback log-likelihood of `xs` under potential `u`.
pub fn nll(u: &Icnn, xs: &SampleBatch, background: &DensitySpec) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let loss = NllLoss::new(background);
    let mut total = 0.0;
    for start in (0..xs.len()).step_by(EVAL_CHUNK) {
        let chunk = xs.slice(start, (start + EVAL_CHUNK).min(xs.len()));
        total += loss_value(&loss, u.arch(), u.params(), &chunk)? * chunk.len() as f64;
    }
    Ok(total / xs.len() as f64)
}

fn shuffled(rng: &mut Rng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng::index(rng, i + 1);
        idx.swap(i, j);
    }
    idx
}

/// Cycles through a sample set in reshuffled epochs.
struct Minibatches<'s> {
    samples: &'s SampleBatch,
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl<'s> Minibatches<'s> {
    fn new(samples: &'s SampleBatch, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let order = shuffled(&mut rng, samples.len());
        Self {
            samples,
            order,
            pos: 0,
            rng,
        }
    }

    fn next(&mut self, size: usize) -> SampleBatch {
        let size = size.min(self.samples.len());
        let mut idx = Vec::with_capacity(size);
        while idx.len() < size {
            if self.pos == self.order.len() {
                self.order = shuffled(&mut self.rng, self.samples.len());
                self.pos = 0;
            }
            idx.push(self.order[self.pos]);
            self.pos += 1;
        }
        self.samples.select(&idx)
    }
}

/// Draws residual collocation points.
fn collocation_batch(
    config: &TrainConfig,
    source: &DensitySpec,
    rng: &mut Rng,
) -> Result<SampleBatch> {
    match config.collocation {
        Collocation::Source => source.sample_with(rng, config.batch_size),
        Collocation::Box { half_width } => {
            let d = source.dim();
            let mut out = SampleBatch::zeros(d, config.batch_size);
            for b in 0..config.batch_size {
                for v in out.row_mut(b) {
                    *v = rng::uniform(rng, -half_width, half_width);
                }
            }
            Ok(out)
        }
    }
}

/// The `(training, held-out)` split that likelihood training uses for
/// `samples` under `config`.
pub fn split_holdout(samples: &SampleBatch, config: &TrainConfig) -> (SampleBatch, SampleBatch) {
    let mut rng = rng::seeded(derive_seed(config.seed, STREAM_HOLDOUT));
    let order = shuffled(&mut rng, samples.len());
    let n_held = ((samples.len() as f64 * config.holdout_fraction) as usize).min(samples.len().saturating_sub(1));
    (samples.select(&order[n_held..]), samples.select(&order[..n_held]))
}

/// Largest floor tried before a non-positive-definite Hessian is fatal.
const MAX_CONVEXITY_FLOOR: f64 = 1.0;

/// Pretrains and fits the forward potential, then pretrains and fits the
/// inverse potential with the forward one frozen. Deterministic given
/// `config.seed`; on failure the history so far is returned with the error.
pub fn train(
    config: &TrainConfig,
    data: TrainData<'_>,
    clock: &dyn Clock,
) -> core::result::Result<TrainedPair, TrainFailure> {
    let mut rec = Recorder {
        clock,
        history: Vec::new(),
    };
    match train_inner(config, data, &mut rec) {
        Ok(mut pair) => {
            pair.history = rec.history;
            Ok(pair)
        }
        Err(error) => Err(TrainFailure {
            error,
            history: rec.history,
        }),
    }
}

fn train_inner(config: &TrainConfig, data: TrainData<'_>, rec: &mut Recorder<'_>) -> Result<TrainedPair> {
    config.validate()?;
    let d = data.dim();
    if d == 0 {
        return Err(Error::ZeroDimension);
    }
    match (config.loss, data) {
        (LossKind::Residual, TrainData::Densities { .. }) | (LossKind::Likelihood, TrainData::Samples { .. }) => {}
        _ => {
            return Err(Error::InvalidConfig(String::from(
                "residual training needs two densities, likelihood training needs samples",
            )))
        }
    }
    let mut effective = config.clone();

    // split off held-out data before anything touches the samples
    let (train_samples, heldout) = match data {
        TrainData::Densities { source, target } => {
            if target.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: target.dim(),
                });
            }
            let held = source.sample(config.holdout_size, derive_seed(config.seed, STREAM_HOLDOUT))?;
            (None, held)
        }
        TrainData::Samples { samples, background } => {
            if background.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: background.dim(),
                });
            }
            if samples.len() < 2 {
                return Err(Error::TooFewSamples {
                    min: 2,
                    got: samples.len(),
                });
            }
            let (train, held) = split_holdout(samples, config);
            (Some(train), held)
        }
    };

    let arch = IcnnArch::new(d, &config.widths, config.alpha, config.convexity_floor)?;
    let mut u = Icnn::init_arch(arch.clone(), derive_seed(config.seed, STREAM_INIT_FORWARD), config.init_scale);
    let forward_pretrain = pretrain_loop(
        &mut u,
        config,
        derive_seed(config.seed, STREAM_PRETRAIN_FORWARD),
        Phase::PretrainForward,
        rec,
    )?;

    let mut rng = rng::seeded(derive_seed(config.seed, STREAM_MAIN));
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        u.params().len(),
    );
    match data {
        TrainData::Densities { source, target } => {
            for it in 0..config.iterations {
                let xs = collocation_batch(config, source, &mut rng)?;
                let loss = ResidualLoss::new(source, target, &xs)?;
                let lr = config.step_size(it, config.iterations);
                let value = descend(&mut u, &mut adam, &loss, &xs, lr, config.clamp_after_step)
                    .map_err(|e| diverged(e, it))?;
                rec.push(Phase::Main, it, value);
            }
        }
        TrainData::Samples { background, .. } => {
            let samples = train_samples.as_ref().expect("likelihood data was split");
            let mut batches = Minibatches::new(samples, derive_seed(config.seed, STREAM_MAIN));
            let nll_loss = NllLoss::new(background);
            let mut it = 0;
            while it < config.iterations {
                let xs = batches.next(config.batch_size);
                let lr = config.step_size(it, config.iterations);
                match descend(&mut u, &mut adam, &nll_loss, &xs, lr, config.clamp_after_step) {
                    Ok(value) => {
                        rec.push(Phase::Main, it, value);
                        it += 1;
                    }
                    Err(Error::NonPdHessian { sample, min_eigenvalue })
                        if effective.convexity_floor < MAX_CONVEXITY_FLOOR =>
                    {
                        let floor = (2.0 * effective.convexity_floor).max(1e-4);
                        log::warn!(
                            "Hessian not positive definite at sample {sample} (min eigenvalue {min_eigenvalue:.3e}); raising convexity floor to {floor:.1e}"
                        );
                        effective.convexity_floor = floor;
                        u = u.with_convexity_floor(floor)?;
                    }
                    Err(e) => return Err(diverged(e, it)),
                }
            }
        }
    }

    // the inverse net is fitted on the pushed-forward training distribution
    let mut v = Icnn::init_arch(
        IcnnArch::new(d, &config.widths, config.alpha, config.convexity_floor)?,
        derive_seed(config.seed, STREAM_INIT_INVERSE),
        config.init_scale,
    );
    let inverse_pretrain = pretrain_loop(
        &mut v,
        config,
        derive_seed(config.seed, STREAM_PRETRAIN_INVERSE),
        Phase::PretrainInverse,
        rec,
    )?;
    let mut rng = rng::seeded(derive_seed(config.seed, STREAM_INVERSE));
    let mut batches = train_samples
        .as_ref()
        .map(|s| Minibatches::new(s, derive_seed(config.seed, STREAM_INVERSE)));
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        v.params().len(),
    );
    let inverse_batch = config.inverse_batch_size.unwrap_or(config.batch_size);
    for it in 0..config.inverse_iterations {
        let xs = match (&mut batches, data) {
            (Some(b), _) => b.next(inverse_batch),
            (None, TrainData::Densities { source, .. }) => source.sample_with(&mut rng, inverse_batch)?,
            (None, TrainData::Samples { .. }) => unreachable!(),
        };
        let ys = u.arch().forward(u.params(), &xs, Order::Gradient)?;
        let ys = u.arch().outputs(&ys).grad_batch();
        let loss = MatchLoss::new(&xs);
        let lr = config.step_size(it, config.inverse_iterations);
        let value = descend(&mut v, &mut adam, &loss, &ys, lr, config.clamp_after_step)
            .map_err(|e| diverged(e, it))?;
        rec.push(Phase::Inverse, it, value);
    }

    let inverse_consistency = inverse_consistency(&u, &v, &heldout)?;
    let heldout_nll = match data {
        TrainData::Samples { background, .. } if !heldout.is_empty() => Some(nll(&u, &heldout, background)?),
        _ => None,
    };
    Ok(TrainedPair {
        forward: u,
        inverse: v,
        history: Vec::new(),
        config: effective,
        forward_pretrain,
        inverse_pretrain,
        inverse_consistency,
        heldout_nll,
    })
}

fn diverged(e: Error, iteration: usize) -> Error {
    match e {
        Error::NonFiniteLoss { .. } => Error::Diverged {
            iteration,
            loss: f64::NAN,
        },
        other => other,
    }
}

/// Runs `project_nonneg` over a raw parameter slice laid out for `arch`.
pub fn clamp_params(arch: &IcnnArch, params: &mut [f64]) {
    project_nonneg_slice(arch.layout(), params);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::Gaussian;
    use approx::assert_relative_eq;

    fn small_config() -> TrainConfig {
        TrainConfig {
            widths: vec![16, 16],
            batch_size: 128,
            iterations: 300,
            pretrain_iterations: 1500,
            inverse_iterations: 300,
            learning_rate: 1e-2,
            holdout_size: 512,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        c = TrainConfig {
            widths: vec![4, 0],
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn pretraining_learns_identity() {
        let config = small_config();
        let net = Icnn::init(2, &config.widths, 3).unwrap();
        let (net, report) = pretrain_identity(&net, &config).unwrap();
        assert!(report.converged, "{report:?}");
        let xs = DensitySpec::StandardGaussian(2).sample(2000, 99).unwrap();
        let ys = net.transport_batch(&xs).unwrap();
        assert!(mean_sq_distance(&xs, &ys) <= 2.0 * report.tolerance);
    }

    #[test]
    fn zero_pretraining_leaves_params() {
        let config = TrainConfig {
            pretrain_iterations: 0,
            ..small_config()
        };
        let net = Icnn::init(2, &[4], 1).unwrap();
        let (out, report) = pretrain_identity(&net, &config).unwrap();
        assert_eq!(out, net);
        assert_eq!(report.iterations, 0);
    }

    #[test]
    fn constant_shift_distance() {
        // u = x^2/2 + 2x as a network: read-out input weight 2, quadratic floor 1
        let arch = IcnnArch::new(1, &[1], 1.1, 1.0).unwrap();
        let mut net = Icnn::zeros(arch);
        net.block_mut(1, crate::diff::ParamRole::ReadoutInput).unwrap()[0] = 2.0;
        let (w2sq, w2) = w2_estimate(&net, &DensitySpec::StandardGaussian(1), 1000, 1).unwrap();
        assert_relative_eq!(w2sq, 4.0, epsilon = 1e-12);
        assert_relative_eq!(w2, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn training_is_deterministic_and_clamped() {
        let config = TrainConfig {
            iterations: 20,
            inverse_iterations: 20,
            pretrain_iterations: 20,
            ..small_config()
        };
        let g = DensitySpec::StandardGaussian(2);
        let data = TrainData::Densities {
            source: &g,
            target: &g,
        };
        let a = train(&config, data, &NoClock).unwrap();
        let b = train(&config, data, &NoClock).unwrap();
        assert_eq!(a, b);
        assert!(a.forward.constraints_hold() && a.inverse.constraints_hold());
        let count = |p: Phase| a.history.iter().filter(|h| h.phase == p).count();
        assert_eq!(count(Phase::Main), 20);
        assert_eq!(count(Phase::Inverse), 20);
    }

    #[test]
    fn likelihood_mode_reports_heldout_nll() {
        let config = TrainConfig {
            loss: LossKind::Likelihood,
            iterations: 30,
            inverse_iterations: 10,
            ..small_config()
        };
        let target = Gaussian::isotropic(vec![1.0, 0.0], 0.5).unwrap();
        let samples = DensitySpec::Gaussian(target).sample(400, 4).unwrap();
        let bg = DensitySpec::StandardGaussian(2);
        let pair = train(
            &config,
            TrainData::Samples {
                samples: &samples,
                background: &bg,
            },
            &NoClock,
        )
        .unwrap();
        assert!(pair.heldout_nll.unwrap().is_finite());
    }

    #[test]
    fn divergence_keeps_history() {
        let config = TrainConfig {
            learning_rate: 1e300,
            pretrain_iterations: 5,
            ..small_config()
        };
        let g = DensitySpec::StandardGaussian(2);
        let err = train(
            &config,
            TrainData::Densities {
                source: &g,
                target: &g,
            },
            &NoClock,
        )
        .unwrap_err();
        assert!(!err.history.is_empty());
    }
}
