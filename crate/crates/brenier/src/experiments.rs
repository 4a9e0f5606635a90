//! Transport problems by name, and a single train-and-evaluate run.

use std::time::Instant;

use brenier_core::metrics::evaluate;
use brenier_core::reference::{
    annulus_reference, gaussian_ot_map, random_convex_reference, random_gaussian_pair, RandomConvexOptions,
    ReferenceMap, TrueW2,
};
use brenier_core::rng::derive_seed;
use brenier_core::train::{train, Clock};
use brenier_core::{DensitySpec, EvalReport, ReferencePair, TrainConfig, TrainData, TrainedPair};
use serde::{Deserialize, Serialize};

use crate::error::{from_train_failure, Error, Result};

/// Dimensions at or above this need an explicit opt-in.
pub const HIGH_DIM: usize = 8;

const STREAM_EVAL: u64 = 0xe7a1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    RandomConvex,
    RandomGaussian,
    Annulus,
    Custom,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::RandomConvex => "random-convex",
            ExperimentKind::RandomGaussian => "random-gaussian",
            ExperimentKind::Annulus => "annulus",
            ExperimentKind::Custom => "custom",
        }
    }
}

/// Settings of the random convex potential behind `random-convex`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomConvexSettings {
    pub widths: Vec<usize>,
    pub scale: f64,
    pub floor: f64,
    pub mc_samples: usize,
}

impl Default for RandomConvexSettings {
    fn default() -> Self {
        let o = RandomConvexOptions::default();
        Self {
            widths: o.widths,
            scale: o.scale,
            floor: o.floor,
            mc_samples: o.mc_samples,
        }
    }
}

impl RandomConvexSettings {
    pub fn options(&self) -> RandomConvexOptions {
        RandomConvexOptions {
            widths: self.widths.clone(),
            scale: self.scale,
            floor: self.floor,
            mc_samples: self.mc_samples,
        }
    }
}

/// Source, target and, when known, the true transport map.
#[derive(Debug, Clone)]
pub struct Problem {
    pub source: DensitySpec,
    pub target: DensitySpec,
    pub reference: Option<ReferencePair>,
}

pub fn check_dim(dim: usize, allow_high_dim: bool) -> Result<()> {
    if dim == 0 {
        return Err(Error::Config("dimension must be at least 1".into()));
    }
    if dim >= HIGH_DIM && !allow_high_dim {
        return Err(Error::Config(format!(
            "dimension {dim} is beyond the desk-scale range; pass --allow-high-dim to run it"
        )));
    }
    Ok(())
}

/// Builds a named problem. `random-gaussian` draws both Gaussians of the pair
/// from `seed`.
pub fn build_problem(
    kind: ExperimentKind,
    dim: usize,
    seed: u64,
    random_convex: &RandomConvexSettings,
    custom: Option<(&DensitySpec, &DensitySpec)>,
) -> Result<Problem> {
    let reference = match kind {
        ExperimentKind::RandomConvex => random_convex_reference(dim, seed, &random_convex.options())?,
        ExperimentKind::RandomGaussian => {
            let (a, b) = random_gaussian_pair(dim, seed)?;
            gaussian_ot_map(&a, &b)?
        }
        ExperimentKind::Annulus => annulus_reference(dim)?,
        ExperimentKind::Custom => {
            let (source, target) =
                custom.ok_or_else(|| Error::Config("custom problems need a source and a target density".into()))?;
            return custom_problem(source.clone(), target.clone());
        }
    };
    Ok(Problem {
        source: reference.source.clone(),
        target: reference.target.clone(),
        reference: Some(reference),
    })
}

/// A user-given pair. The true map is known when the densities coincide or
/// are both Gaussian.
pub fn custom_problem(source: DensitySpec, target: DensitySpec) -> Result<Problem> {
    if source.dim() != target.dim() {
        return Err(Error::Config(format!(
            "source has dimension {} but target has dimension {}",
            source.dim(),
            target.dim()
        )));
    }
    let reference = if source == target {
        Some(ReferencePair {
            source: source.clone(),
            target: target.clone(),
            true_map: ReferenceMap::Identity(source.dim()),
            true_inverse: Some(ReferenceMap::Identity(source.dim())),
            true_w2: Some(TrueW2::exact(0.0)),
        })
    } else {
        match (source.as_gaussian(), target.as_gaussian()) {
            (Some(a), Some(b)) => {
                let mut pair = gaussian_ot_map(&a, &b)?;
                pair.source = source.clone();
                pair.target = target.clone();
                Some(pair)
            }
            _ => None,
        }
    };
    Ok(Problem {
        source,
        target,
        reference,
    })
}

/// Evaluation sample count and seed; the seed defaults to a stream derived
/// from the training seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            n: brenier_core::metrics::DEFAULT_EVAL_SAMPLES,
            seed: None,
        }
    }
}

impl EvalSettings {
    pub fn seed_for(&self, train_seed: u64) -> u64 {
        self.seed.unwrap_or_else(|| derive_seed(train_seed, STREAM_EVAL))
    }
}

/// Outcome of training on one problem.
#[derive(Debug, Clone)]
pub struct Run {
    pub pair: TrainedPair,
    pub report: Option<EvalReport>,
    pub train_secs: f64,
}

/// Trains on `problem` with the residual loss and evaluates against its
/// reference when there is one. The report's wall time stays zero.
pub fn run_problem(problem: &Problem, config: &TrainConfig, eval: &EvalSettings, clock: &dyn Clock) -> Result<Run> {
    let start = Instant::now();
    let data = TrainData::Densities {
        source: &problem.source,
        target: &problem.target,
    };
    let pair = train(config, data, clock).map_err(|f| from_train_failure(f.error))?;
    let train_secs = start.elapsed().as_secs_f64();
    let report = match &problem.reference {
        Some(reference) => {
            let mut r = evaluate(&pair.forward, reference, eval.n, eval.seed_for(config.seed), config.seed)?;
            r.inverse_consistency = Some(pair.inverse_consistency);
            Some(r)
        }
        None => None,
    };
    Ok(Run {
        pair,
        report,
        train_secs,
    })
}
