//! Crate-wide error type shared by the map, learner, data, and evaluation modules.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong when building models or shuttling data around.
#[derive(Debug, Error)]
pub enum Error {
    /// Two containers that must agree on the number of concepts do not.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// A numeric value escaped its documented interval.
    #[error("{what} = {value} lies outside [{lo}, {hi}]")]
    OutOfRange {
        what: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// Configuration that fails validation before any work starts.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Roulette selection over a population whose total fitness is zero.
    #[error("roulette selection is undefined: total fitness is zero")]
    DegenerateSelection,

    /// A malformed cell or record in an input file, located by line number.
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    /// Structurally invalid data that is not tied to a single file line.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A participant present in the dataset has no learned matrix to evaluate.
    #[error("participant {0} has no learned matrix")]
    MissingModel(String),

    /// A statistical routine was handed fewer observations than it supports.
    #[error("sample of {actual} is too small: need at least {needed}")]
    SampleTooSmall { needed: usize, actual: usize },

    /// A statistical routine was handed a constant sample.
    #[error("sample has zero variance")]
    ZeroVariance,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line()).unwrap_or(0);
        let message = e.to_string();
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => Error::Parse { line, message },
        }
    }
}
