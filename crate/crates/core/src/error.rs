//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("single-class treatment vector: fit a constant model instead ({0})")]
    SingleClass(String),

    #[error("optimizer failed to converge after {iterations} iterations (grad norm {grad_norm:.3e}, tol {tol:.3e})")]
    NoConvergence {
        iterations: usize,
        grad_norm: f64,
        tol: f64,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("dataset error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("replicate {replicate} ({method}) failed: {source}")]
    Replicate {
        method: String,
        replicate: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
