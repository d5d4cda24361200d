use alloc::string::String;

/// Errors raised across the library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotSpd { index: usize, pivot: f64 },
    #[error("entry ({row}, {col}) = {value:e} lies outside the topology sparsity pattern")]
    SparsityViolation { row: usize, col: usize, value: f64 },
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("gimbal lock: |cos(pitch)| = {0:e} is below 0.05")]
    GimbalLock(f64),
    #[error("invalid excitation spec: {0}")]
    InvalidSpec(String),
    #[error("extremal eigenvalue is repeated (gap {0:e})")]
    NonDifferentiablePoint(f64),
    #[error("torque coordinate {0} has degenerate variance")]
    DegenerateVariance(usize),
    #[error("all NMSE values are zero")]
    AllZero,
    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn dim_check(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
