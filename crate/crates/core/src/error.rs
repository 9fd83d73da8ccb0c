//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by dataset construction, model specification, likelihood
/// evaluation, fitting, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("invalid parameter value: {0}")]
    InvalidParameter(String),

    #[error("date {0} outside the period partition span")]
    DateOutOfSpan(chrono::NaiveDate),

    #[error("lag {0} out of range (max {1})")]
    LagOutOfRange(usize, usize),

    #[error("day index {0} out of range (dataset has {1} days)")]
    DayOutOfRange(usize, usize),

    #[error("design matrix is rank deficient (rank {rank}, {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("singular covariance direction: contrast has non-positive variance")]
    SingularContrast,

    #[error("input error: {0}")]
    Input(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
