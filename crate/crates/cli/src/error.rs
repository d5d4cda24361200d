use std::path::Path;

use fbid_core::Error as CoreError;

/// Failures of a command, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, unreadable or malformed configuration, missing files.
    #[error("{0}")]
    Config(String),
    /// Dataset or checkpoint content that does not fit the request.
    #[error("{0}")]
    Data(String),
    /// Divergence or a failed factorization.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn config(msg: impl Into<String>) -> CliError {
        CliError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> CliError {
        CliError::Data(msg.into())
    }

    /// Missing input files are configuration errors; anything else while
    /// reading is a data error.
    pub fn read(path: &Path, e: std::io::Error) -> CliError {
        let msg = format!("{}: {e}", path.display());
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::Config(msg)
        } else {
            CliError::Data(msg)
        }
    }

    pub fn write(path: &Path, e: impl std::fmt::Display) -> CliError {
        CliError::Data(format!("cannot write {}: {e}", path.display()))
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> CliError {
        let msg = e.to_string();
        match e {
            CoreError::InvalidConfig(_) | CoreError::InvalidTopology(_) | CoreError::InvalidSpec(_) => CliError::Config(msg),
            CoreError::NotPsd(_)
            | CoreError::NotSpd { .. }
            | CoreError::NumericalFailure(_)
            | CoreError::NonDifferentiablePoint(_)
            | CoreError::GimbalLock(_) => CliError::Numerical(msg),
            CoreError::SparsityViolation { .. }
            | CoreError::DimensionMismatch { .. }
            | CoreError::DegenerateVariance(_)
            | CoreError::AllZero
            | CoreError::TopologyMismatch(_)
            | CoreError::InvalidData(_) => CliError::Data(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
