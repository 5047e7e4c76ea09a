//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by kernel, loss, training and ingestion code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),

    /// The residuals have zero spread, so the median rule would return a
    /// zero kernel width. Callers either abort or substitute a floor.
    #[error("degenerate bandwidth: all residuals are identical")]
    DegenerateBandwidth,

    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite {what}")]
    NonFinite { what: &'static str },

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("column `{0}` not found in CSV header")]
    MissingColumn(String),

    #[error("non-numeric value `{value}` in column `{column}` at data record {record}")]
    NonNumeric {
        column: String,
        record: usize,
        value: String,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("model file format: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
