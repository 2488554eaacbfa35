use std::path::PathBuf;

use thiserror::Error;

use crate::training::EpochRecord;

/// Errors produced anywhere in the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error in {}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("capacity error in stratum {stratum}: requested {requested}, available {available}")]
    Capacity {
        stratum: String,
        requested: usize,
        available: usize,
    },

    #[error("shape error at layer {layer}: {msg}")]
    Shape { layer: usize, msg: String },

    #[error("state error: {0}")]
    State(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("coverage error: no items for cells {missing:?}")]
    Coverage { missing: Vec<(usize, usize)> },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("training failed: accuracy stayed at chance level after {restarts} restarts")]
    TrainingFailure {
        restarts: usize,
        records: Vec<EpochRecord>,
    },

    #[error("grid search failed: all {} grid points failed", .table.len())]
    SearchFailure {
        table: Vec<crate::experiment::GridPointResult>,
    },

    #[error("plan error: {0}")]
    Plan(String),

    #[error("config error at {pointer}: {msg}")]
    Config { pointer: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
