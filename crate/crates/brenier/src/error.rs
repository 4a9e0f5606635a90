use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("training diverged: {0}")]
    Diverged(brenier_core::Error),

    #[error(transparent)]
    Core(#[from] brenier_core::Error),

    #[error("{failed} of {total} benchmark runs failed")]
    PartialFailure { failed: usize, total: usize },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) | Error::Parse { .. } => 2,
            Error::Core(e) if is_input_error(e) => 2,
            Error::Diverged(_) => 3,
            Error::Io { .. } => 4,
            Error::PartialFailure { .. } => 5,
            Error::Core(_) => 1,
        }
    }
}

fn is_input_error(e: &brenier_core::Error) -> bool {
    use brenier_core::Error as E;
    matches!(
        e,
        E::DimensionMismatch { .. }
            | E::LayoutMismatch { .. }
            | E::InvalidWidths
            | E::ZeroDimension
            | E::InvalidAlpha(_)
            | E::NotPositiveDefinite
            | E::InvalidMixture(_)
            | E::EmptyBatch
            | E::GridDimension(_)
            | E::TooFewSamples { .. }
            | E::InvalidConfig(_)
    )
}

/// Sorts a training failure into divergence or a plain error.
pub fn from_train_failure(e: brenier_core::Error) -> Error {
    use brenier_core::Error as E;
    match e {
        E::Diverged { .. } | E::NonFiniteLoss { .. } | E::NonFiniteActivation { .. } | E::NonPdHessian { .. } => {
            Error::Diverged(e)
        }
        other => Error::Core(other),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            Error::Config("x".into()).exit_code(),
            Error::Diverged(brenier_core::Error::Diverged {
                iteration: 3,
                loss: f64::NAN,
            })
            .exit_code(),
            Error::io("f", std::io::Error::other("boom")).exit_code(),
            Error::PartialFailure { failed: 1, total: 3 }.exit_code(),
            Error::Core(brenier_core::Error::InversionFailed { residual: 1.0 }).exit_code(),
        ];
        assert_eq!(codes, [2, 3, 4, 5, 1]);
        assert_eq!(Error::Core(brenier_core::Error::EmptyBatch).exit_code(), 2);
    }

    #[test]
    fn nan_loss_counts_as_divergence() {
        let e = from_train_failure(brenier_core::Error::NonFiniteLoss { sample: 0 });
        assert_eq!(e.exit_code(), 3);
    }
}
