use thiserror::Error;

/// Errors raised by the simulation toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("resource cap exceeded: {what} = {value} (cap {cap})")]
    ResourceCap {
        what: &'static str,
        value: usize,
        cap: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("eigensolver did not converge for eigenvalue {index} after {iterations} iterations")]
    NoConvergence { index: usize, iterations: usize },

    #[error("degenerate gap {gap:e} between ground and first excited state")]
    DegenerateGap { gap: f64 },

    #[error("step size {dt:e} s exceeds limit {limit:e} s")]
    StepSize { dt: f64, limit: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;
