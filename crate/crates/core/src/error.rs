use std::path::PathBuf;

use crate::ndgrad::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("momentum coefficient {0} outside [0, 1]")]
    Momentum(f64),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("key pool is empty; warm it up before sampling")]
    EmptyPool,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{queries} queries but {keys} key batches")]
    KeyBatchMismatch { queries: usize, keys: usize },
    #[error("key batch slot 0 has label {slot0}, query has label {query}")]
    SlotZeroLabel { slot0: usize, query: usize },
    #[error("no loss term enabled")]
    NoLossEnabled,
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: &'static str, iteration: usize },
    #[error("checkpoint line {line}: {reason}")]
    Checkpoint { line: usize, reason: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column {column}: `{value}` is not a number")]
    NonNumeric { line: u64, column: usize, value: String },
    #[error("line {line}: label `{value}` is not an integer")]
    NonIntegerLabel { line: u64, value: String },
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field,
            reason: reason.into(),
        }
    }
}
