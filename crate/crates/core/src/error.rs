use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("backprop requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("row {row} has zero norm and cannot be projected")]
    ZeroNormRow { row: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing data file for domain {domain}: {path}")]
    MissingFile { domain: usize, path: PathBuf },

    #[error("checksum mismatch for domain {domain}: manifest {expected}, file {actual}")]
    Checksum { domain: usize, expected: String, actual: String },

    #[error("domain {domain}: {detail}")]
    Dimension { domain: usize, detail: String },

    #[error("domain {domain}, row {row}: label {label} outside [0, {num_classes})")]
    LabelRange { domain: usize, row: usize, label: i64, num_classes: usize },

    #[error("domain {domain}, row {row}: {detail}")]
    Parse { domain: usize, row: usize, detail: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
    }
}
