use thiserror::Error;

/// Errors raised by the numerical routines and the experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive semi-definite after jitter ({context})")]
    Factorization { context: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("dense oracle size {size} exceeds cap {cap}")]
    CapExceeded { size: usize, cap: usize },

    #[error("all particle weights are zero at time step {t}")]
    DegenerateWeights { t: usize },

    #[error("potential estimator returned a negative value {value} at time step {t}")]
    NegativeEstimate { t: usize, value: f64 },

    #[error("proposal mode {mode} is incompatible with the model: {reason}")]
    ModeMismatch { mode: String, reason: String },

    #[error("effective sample size undefined: {0}")]
    Ess(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn factorization(context: impl Into<String>) -> Self {
        Error::Factorization {
            context: context.into(),
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
