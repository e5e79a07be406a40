use std::fmt::Display;

/// Errors produced by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("matrix of dimension {dim} exceeds the materialization cap of {cap}")]
    TooLarge { dim: usize, cap: usize },

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("definiteness check failed: {0}")]
    NotDefinite(String),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn mismatch(
        context: &'static str,
        expected: impl Display,
        found: impl Display,
    ) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NonFinite(_) => "non_finite",
            Error::Singular(_) => "singular",
            Error::TooLarge { .. } => "too_large",
            Error::Divergence(_) => "divergence",
            Error::NotDefinite(_) => "not_definite",
            Error::NoConvergence(_) => "no_convergence",
            Error::Data(_) => "data",
            Error::Config { .. } => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}
