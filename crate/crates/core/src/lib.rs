//! Continuous optimal transport with input-convex Brenier potentials.
//!
//! The optimal map between two absolutely continuous densities on `R^d` is the
//! gradient of a convex potential `u` solving the Monge-Ampere equation
//!
//! ```text
//! det(D^2 u(x)) * g(grad u(x)) = f(x)
//! ```
//!
//! This crate parameterizes `u` as an input-convex network ([`icnn::Icnn`]) and
//! fits it either by minimizing the squared residual of that equation at
//! collocation points, or, when only samples of `f` are available, by
//! maximizing the pullback log-likelihood of the samples. A second network
//! learns the inverse map. Exact input gradients and Hessians, and parameter
//! gradients of losses built from them, come from [`diff`].
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the CLI and
//! wall-clock timing live in the companion `brenier` crate.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

extern crate alloc;

pub mod activation;
pub mod batch;
pub mod density;
pub mod diff;
pub mod error;
pub mod fields;
pub mod icnn;
pub mod invert;
pub mod linalg;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod reference;
pub mod rng;
pub mod train;

pub use batch::SampleBatch;
pub use density::{DensitySpec, Gaussian, MapDirection, Mixture, NetPushforward};
pub use diff::{DerivativeBundle, Order, ParamLayout, ScalarField};
pub use error::{Error, Result};
pub use icnn::{Icnn, IcnnArch};
pub use metrics::{EvalReport, GridSpec};
pub use reference::{ReferenceMap, ReferencePair};
pub use train::{LossKind, TrainConfig, TrainData, TrainedPair};
