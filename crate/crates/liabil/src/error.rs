//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error at data row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("model not identifiable: {0}")]
    Identifiability(String),

    /// Inverse weighting requires the censoring survival probability to be
    /// strictly positive at every uncensored pair's observation times.
    #[error(
        "positivity violation for pair {pair_id}: estimated censoring survival is {gc:.3e} \
         at the pair's observation times; inverse weights are undefined"
    )]
    Positivity { pair_id: String, gc: f64 },

    #[error("estimation did not converge after {iterations} iterations (max |score| = {max_score:.3e})")]
    NonConvergence { iterations: usize, max_score: f64 },

    #[error("singular matrix in {0}")]
    Singular(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}
