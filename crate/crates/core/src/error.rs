//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A required column is missing or the column mapping is unusable.
    #[error("schema error: {0}")]
    Schema(String),
    /// A specific data row failed to parse or validate.
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("empty input: {0}")]
    Empty(String),
    /// A single evaluation run failed; carries enough identity to find it.
    #[error("method {method} at delta_min={delta_min}, repeat {repeat}: {source}")]
    Run {
        method: String,
        delta_min: f64,
        repeat: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
