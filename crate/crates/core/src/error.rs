use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parameter vector has {got} entries, layout expects {expected}")]
    LayoutMismatch { expected: usize, got: usize },

    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("non-finite loss contribution at sample {sample}")]
    NonFiniteLoss { sample: usize },

    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),

    #[error("hidden widths must be non-empty and every width positive")]
    InvalidWidths,

    #[error("input dimension must be at least 1")]
    ZeroDimension,

    #[error("activation exponent must be >= 1, got {0}")]
    InvalidAlpha(f64),

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("Hessian is not positive definite at sample {sample} (smallest eigenvalue {min_eigenvalue:e})")]
    NonPdHessian { sample: usize, min_eigenvalue: f64 },

    #[error("mixture weights must be non-negative and sum to 1 (sum = {0})")]
    InvalidMixture(f64),

    #[error("empty sample batch")]
    EmptyBatch,

    #[error("target variance is zero")]
    ZeroVariance,

    #[error("true W2 distance is zero; report the absolute error instead")]
    ZeroReference,

    #[error("grid export needs a 2-d input, got dimension {0}")]
    GridDimension(usize),

    #[error("gradient inversion did not converge (residual {residual:e})")]
    InversionFailed { residual: f64 },

    #[error("evaluation needs at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },

    #[error("training diverged at iteration {iteration} (loss {loss})")]
    Diverged { iteration: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
