use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Cholesky failed on the raw matrix and on both jitter levels.
    #[error("{0} is not positive definite, even with diagonal jitter")]
    NotPositiveDefinite(&'static str),

    #[error("singular conditioning: {0}")]
    SingularConditioning(String),

    #[error("{value} is outside the domain of the {transform} transform")]
    Domain { transform: String, value: f64 },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(
        "conditioned mixture is empty: every component weight underflowed \
         (nearest component {nearest}, log-weight {log_weight})"
    )]
    EmptyPosterior { nearest: usize, log_weight: f64 },

    #[error("forward model failed: {0}")]
    Forward(String),

    #[error("{failed} of {total} forward evaluations failed, more than the 10% tolerance")]
    TooManyForwardFailures { failed: usize, total: usize },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
