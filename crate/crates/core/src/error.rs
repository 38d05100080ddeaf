use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the coreset library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("feature dimension must be at least 1")]
    ZeroDimension,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("negative or non-finite weight {weight} at point {index}")]
    InvalidWeight { index: usize, weight: f64 },

    #[error("total weight is zero")]
    ZeroWeight,

    #[error("row {row}, column {column}: cannot parse {token:?} as a number")]
    Parse {
        row: usize,
        column: usize,
        token: String,
    },

    #[error("row {row}: expected {expected} fields, found {found}")]
    MissingField {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("row {row}: unknown label token {token:?} (accepted: -1, 0, 1, +1)")]
    UnknownLabel { row: usize, token: String },

    #[error("column {0:?} not found in header")]
    UnknownColumn(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point {0} has no cluster assignment")]
    Unassigned(usize),

    #[error("stream is empty")]
    EmptyStream,

    #[error("sweep cell {method}/{m} failed in {failed} of {trials} trials")]
    SweepInvalid {
        method: String,
        m: usize,
        failed: usize,
        trials: usize,
    },

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
