use crate::autodiff::AutodiffError;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("incompatible artifact: {0}")]
    Incompatible(String),
    #[error("checkpoint error at byte {offset}: {message}")]
    Checkpoint { offset: u64, message: String },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("degenerate projection: norm {norm:e}")]
    DegenerateProjection { norm: f64 },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

impl Error {
    /// Process exit code: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Contract(_) => 1,
            Error::Data(_) | Error::Io { .. } | Error::Incompatible(_) | Error::Checkpoint { .. } => 2,
            Error::Numeric(_) | Error::DegenerateProjection { .. } | Error::Autodiff(_) => 3,
        }
    }
}
