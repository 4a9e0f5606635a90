//! TOML configuration files for every command. Each file carries
//! `schema = 1`; omitted tables and fields take their defaults.

use std::path::Path;

use brenier_core::metrics::GridSpec;
use brenier_core::{DensitySpec, TrainConfig};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{check_dim, EvalSettings, ExperimentKind, RandomConvexSettings};
use crate::io::DensityDoc;

pub const SCHEMA_VERSION: u32 = 1;

fn check_schema(schema: u32) -> Result<()> {
    if schema != SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "unsupported config schema {schema} (this build reads schema {SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

fn default_dim() -> usize {
    2
}

/// The problem a `solve` run works on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Seed of the random reference problem.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<DensityDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<DensityDoc>,
    #[serde(default)]
    pub random_convex: RandomConvexSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub schema: u32,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub allow_high_dim: bool,
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        check_schema(self.schema)?;
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        let p = &self.problem;
        match (p.kind, &p.source, &p.target) {
            (ExperimentKind::Custom, Some(_), Some(_)) => {}
            (ExperimentKind::Custom, _, _) => {
                return Err(Error::Config("custom problems need [problem.source] and [problem.target]".into()))
            }
            (_, None, None) => {}
            _ => return Err(Error::Config("source and target are only read for custom problems".into())),
        }
        if self.train.loss != brenier_core::LossKind::Residual {
            return Err(Error::Config("solve trains with loss = \"residual\"".into()));
        }
        check_dim(self.dim()?, self.allow_high_dim)
    }

    /// Problem dimension; custom problems take it from their densities.
    pub fn dim(&self) -> Result<usize> {
        match &self.problem.source {
            Some(doc) if self.problem.kind == ExperimentKind::Custom => Ok(doc.to_spec()?.dim()),
            _ => Ok(self.problem.dim),
        }
    }

    pub fn custom_densities(&self) -> Result<Option<(DensitySpec, DensitySpec)>> {
        match (&self.problem.source, &self.problem.target) {
            (Some(s), Some(t)) => Ok(Some((s.to_spec()?, t.to_spec()?))),
            _ => Ok(None),
        }
    }
}

/// Grid export settings for 2-d models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub res: [usize; 2],
}

impl Default for GridConfig {
    fn default() -> Self {
        let g = GridSpec::square(6.0, 200);
        Self {
            lo: g.lo,
            hi: g.hi,
            res: g.res,
        }
    }
}

impl GridConfig {
    pub fn spec(&self) -> GridSpec {
        GridSpec {
            lo: self.lo,
            hi: self.hi,
            res: self.res,
        }
    }
}

fn likelihood_train() -> TrainConfig {
    TrainConfig {
        loss: brenier_core::LossKind::Likelihood,
        ..TrainConfig::default()
    }
}

fn likelihood_table<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<TrainConfig, D::Error> {
    let mut table = toml::Table::deserialize(d)?;
    table.entry("loss").or_insert_with(|| "likelihood".into());
    toml::Value::Table(table).try_into().map_err(serde::de::Error::custom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub schema: u32,
    /// Defaults to the standard Gaussian in the dimension of the samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<DensityDoc>,
    /// `loss` defaults to `"likelihood"` here.
    #[serde(default = "likelihood_train", deserialize_with = "likelihood_table")]
    pub train: TrainConfig,
    #[serde(default)]
    pub grid: GridConfig,
    /// Known data density, used only to report its held-out likelihood.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<DensityDoc>,
    #[serde(default)]
    pub allow_high_dim: bool,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            background: None,
            train: likelihood_train(),
            grid: GridConfig::default(),
            truth: None,
            allow_high_dim: false,
        }
    }
}

impl EstimateConfig {
    pub fn validate(&self) -> Result<()> {
        check_schema(self.schema)?;
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.train.loss != brenier_core::LossKind::Likelihood {
            return Err(Error::Config("estimate trains with loss = \"likelihood\"".into()));
        }
        self.grid.spec().validate().map_err(|e| Error::Config(e.to_string()))
    }
}

fn default_experiments() -> Vec<ExperimentKind> {
    vec![
        ExperimentKind::RandomConvex,
        ExperimentKind::RandomGaussian,
        ExperimentKind::Annulus,
    ]
}

fn default_dims() -> Vec<usize> {
    vec![2, 3, 5]
}

fn default_seeds() -> usize {
    5
}

/// A grid of experiments × dimensions, each run for `seeds` seeds
/// `base_seed, base_seed + 1, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub schema: u32,
    #[serde(default = "default_experiments")]
    pub experiments: Vec<ExperimentKind>,
    #[serde(default = "default_dims")]
    pub dims: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub random_convex: RandomConvexSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<DensityDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<DensityDoc>,
    #[serde(default)]
    pub allow_high_dim: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            experiments: default_experiments(),
            dims: default_dims(),
            seeds: default_seeds(),
            base_seed: 0,
            train: TrainConfig::default(),
            eval: EvalSettings::default(),
            random_convex: RandomConvexSettings::default(),
            source: None,
            target: None,
            allow_high_dim: false,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        check_schema(self.schema)?;
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.train.loss != brenier_core::LossKind::Residual {
            return Err(Error::Config("benchmarks train with loss = \"residual\"".into()));
        }
        if self.experiments.is_empty() || self.dims.is_empty() {
            return Err(Error::Config("experiments and dims must be non-empty".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be at least 1".into()));
        }
        for &d in &self.dims {
            check_dim(d, self.allow_high_dim)?;
        }
        if self.experiments.contains(&ExperimentKind::Custom) {
            let (Some(s), Some(t)) = (&self.source, &self.target) else {
                return Err(Error::Config("custom experiments need source and target densities".into()));
            };
            let d = s.to_spec()?.dim();
            if t.to_spec()?.dim() != d || self.dims.iter().any(|&x| x != d) {
                return Err(Error::Config(format!("custom densities fix the dimension to {d}")));
            }
        }
        Ok(())
    }
}

pub fn parse<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::parse(origin, e))
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, path)
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Config(e.to_string()))
}
