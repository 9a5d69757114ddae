use thiserror::Error;

/// Errors surfaced by model construction, inference, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: dimension mismatch, expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("{context}: non-finite value encountered")]
    NonFinite { context: String },

    #[error("{context}: Cholesky factorization failed at pivot {pivot}")]
    CholeskyFailed { context: String, pivot: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("likelihood returned a non-finite score at sequence {sequence}, component {component}, sample {sample}")]
    LikelihoodFailure {
        sequence: usize,
        component: usize,
        sample: usize,
    },

    #[error("{context}: budget exceeded ({detail})")]
    BudgetExceeded { context: String, detail: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dimension(context: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }

    pub fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
