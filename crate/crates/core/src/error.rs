use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed something outside an operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("non-finite function value at coordinate {index} ({value})")]
    Evaluation { index: usize, value: f64 },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Training { epoch: usize, loss: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("infeasible constraint: {0}")]
    Infeasible(String),

    #[error("{path}: bad magic, expected {expected}")]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("{path}: truncated file: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("{path}: dimension mismatch: {detail}")]
    DimensionMismatch { path: PathBuf, detail: String },

    #[error("{path}: checksum mismatch")]
    Checksum { path: PathBuf },

    #[error("{path}:{row}: parse error at column {col}: {detail}")]
    Parse {
        path: PathBuf,
        row: usize,
        col: usize,
        detail: String,
    },

    #[error("{path}:{row}: label {label} out of range for {classes} classes")]
    LabelRange {
        path: PathBuf,
        row: usize,
        label: i64,
        classes: usize,
    },

    #[error("{path}: file not found")]
    Missing { path: PathBuf },

    #[error("{path}: no records found")]
    NoRecords { path: PathBuf },

    #[error("config error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// Process exit code: 2 usage, 3 data/format, 4 numeric/training.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) | Error::Argument(_) => 2,
            Error::BadMagic { .. }
            | Error::Truncated { .. }
            | Error::DimensionMismatch { .. }
            | Error::Checksum { .. }
            | Error::Parse { .. }
            | Error::LabelRange { .. }
            | Error::Missing { .. }
            | Error::NoRecords { .. }
            | Error::Io(_) => 3,
            Error::Evaluation { .. }
            | Error::Training { .. }
            | Error::Numeric(_)
            | Error::Infeasible(_) => 4,
        }
    }
}
