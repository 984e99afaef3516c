//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Index outside the valid range of a grid entity.
    #[error("index {index} out of range (limit {limit}) for {what}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    /// A vector or matrix had the wrong length/shape.
    #[error("bad length for {what}: got {got}, expected {expected}")]
    BadLength {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    /// Tensor shape mismatch; carries both shapes.
    #[error("shape mismatch in {op}: lhs {lhs:?}, rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Invalid argument value.
    #[error("invalid argument {what}: {msg}")]
    InvalidArgument { what: &'static str, msg: String },

    /// Source/boundary data violates the compatibility condition.
    #[error("incompatible problem data: mass defect {defect:e} exceeds tolerance {tol:e}")]
    Incompatible { defect: f64, tol: f64 },

    /// A linear system was singular beyond its known nullspace.
    #[error("singular system in {what}")]
    Singular { what: &'static str },

    /// Spectral reduction could not produce enough basis vectors.
    #[error("coarse cell {cell}: only {available} usable eigenpairs, need {needed}")]
    InsufficientEigenpairs {
        cell: usize,
        available: usize,
        needed: usize,
    },

    /// Malformed or mismatched binary file contents.
    #[error("format error in {what}: {msg}")]
    Format { what: &'static str, msg: String },

    /// I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
