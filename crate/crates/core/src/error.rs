use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the forecasting toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: data row {row}, column `{column}`: cannot parse {value:?} as a number")]
    ParseCell {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },

    #[error("{path}: data row {row} has {found} fields, header has {expected}")]
    RaggedRow {
        path: PathBuf,
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("{0}")]
    EmptyData(String),

    #[error("invalid split fractions: {0}")]
    InvalidSplit(String),

    #[error("segment of {len} steps is too short for lookback {lookback} + horizon {horizon}")]
    SegmentTooShort {
        len: usize,
        lookback: usize,
        horizon: usize,
    },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("non-finite {what} encountered{}", epoch.map(|e| format!(" at epoch {e}")).unwrap_or_default())]
    NonFinite {
        what: &'static str,
        epoch: Option<usize>,
    },

    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        report: Box<crate::optim::TrainReport>,
    },

    #[error("total sum of squares is zero; R² is undefined")]
    ZeroVariance,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed JSON")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(
    context: &'static str,
    expected: impl std::fmt::Debug,
    actual: impl std::fmt::Debug,
) -> Error {
    Error::Shape {
        context,
        expected: format!("{expected:?}"),
        actual: format!("{actual:?}"),
    }
}
