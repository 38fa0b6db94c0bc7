use thiserror::Error;

use crate::numerics::NumericsError;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("integrity: {0}")]
    Integrity(String),
    #[error("protocol violations: {count} (first at row {first_row})")]
    Protocol { count: usize, first_row: usize },
    #[error("degenerate prior: {0}")]
    DegeneratePrior(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("estimation failed: {0}")]
    Estimation(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
