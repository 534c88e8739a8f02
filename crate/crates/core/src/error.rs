//! Crate-wide error type.

use thiserror::Error;

/// Errors reported by solvers, samplers, and attack searches.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// The hard-margin solver certified that no positive-margin direction
    /// exists (duality gap closed at margin <= 0).
    #[error("data is not linearly separable: certified margin {margin:.3e}")]
    NonSeparable { margin: f64 },

    /// The solver hit its iteration cap before certifying the requested
    /// tolerance.
    #[error("solver exhausted {iters} iterations (last duality gap {gap:.3e})")]
    IterationBudget { iters: usize, gap: f64 },

    /// Array dimensions disagree.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// File or stream failure while reading or writing artifacts.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Malformed on-disk data (PNM headers, label files, configs).
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParam(msg.into())
    }
}
