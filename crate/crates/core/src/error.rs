use thiserror::Error;

/// Errors raised across the modelling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("degenerate axis {axis}: all coordinates are equal")]
    DegenerateAxis { axis: usize },

    #[error("site {site} lies within {eps:e} of the Möbius pole")]
    MobiusPole { site: usize, eps: f64 },

    #[error("Cholesky factorization failed even with diagonal jitter {jitter:e}")]
    Cholesky { jitter: f64 },

    #[error("non-finite gradient in parameter block `{block}`")]
    NonFiniteGradient { block: String },

    #[error("loss diverged at step {step} (value {value})")]
    Divergence { step: usize, value: f64 },

    #[error("rejection sampler exhausted {tries} proposals (acceptance rate {rate:.3e})")]
    RejectionBudget { tries: u64, rate: f64 },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("config error at `{pointer}`: {message}")]
    Config { pointer: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 2 for validation problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invalid(_) | Error::Config { .. } | Error::DegenerateAxis { .. } => 2,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => 1,
            _ => 3,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
