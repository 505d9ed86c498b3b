use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TomoError>;

#[derive(Debug, Error)]
pub enum TomoError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("enumeration budget exceeded: {count} subsets > {budget}; use monte-carlo mode")]
    Budget { count: u128, budget: u128 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("{path}: bad container format: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: truncated container (expected {expected} bytes, found {found})")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl TomoError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        TomoError::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        TomoError::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TomoError::Io {
            path: path.into(),
            source,
        }
    }
}
