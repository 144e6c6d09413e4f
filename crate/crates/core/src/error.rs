use thiserror::Error;

/// Errors produced by the combinatorics, representation and spectral layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid partition {parts:?}: {reason}")]
    InvalidPartition {
        parts: Vec<usize>,
        reason: &'static str,
    },

    #[error("invalid tableau: {0}")]
    InvalidTableau(String),

    #[error("integer overflow while computing {0}")]
    Overflow(&'static str),

    #[error("shape {shape} has {found} boxes, expected {expected}")]
    BoxCountMismatch {
        shape: String,
        expected: usize,
        found: usize,
    },

    #[error("index {index} out of range (valid: {min}..={max})")]
    IndexOutOfRange {
        index: usize,
        min: usize,
        max: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("block dimension {dim} exceeds the dense cap {cap}")]
    DenseCapExceeded { dim: usize, cap: usize },

    #[error("operator is not symmetric (asymmetry {0:e}); use the singular-value path")]
    NotSymmetric(f64),

    #[error(
        "iterative solver did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("unit eigenvalue count changes under tolerance refinement ({coarse} at tol, {fine} at tol/10)")]
    AmbiguousCount { coarse: usize, fine: usize },

    #[error("dense eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("size cap exceeded: {0}")]
    SizeCap(String),
}

pub type Result<T> = std::result::Result<T, Error>;
