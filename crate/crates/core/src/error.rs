use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("matrix is singular or not positive definite: {0}")]
    Singular(String),

    #[error("matrix is not Hermitian (max asymmetry {0:.3e})")]
    NotHermitian(f64),

    #[error("grid covers only {coverage:.6} of the estimate-power mass; need at least {required_points} points at the current step")]
    Coverage {
        coverage: f64,
        required_points: usize,
    },

    #[error("numerical convergence failure: {0}")]
    Convergence(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing precomputation: {0}")]
    MissingArtifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by the caller's configuration rather than by the
    /// numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::Dimension { .. }
                | Error::Config(_)
                | Error::Coverage { .. }
                | Error::NotHermitian(_)
                | Error::Json(_)
                | Error::MissingArtifact(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
