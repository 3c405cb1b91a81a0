use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CoteachError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoteachError {
    /// Inconsistent or invalid configuration (shapes, strategy/model mismatch, bad JSON).
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller supplied an out-of-range value.
    #[error("input error: {0}")]
    Input(String),

    /// A data file does not follow its binary or text format.
    #[error("format error in {path} at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    /// A NaN or infinity reached a place where it would corrupt training.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CoteachError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoteachError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            CoteachError::Config(_) | CoteachError::Input(_) => 2,
            CoteachError::Numerical(_) => 3,
            CoteachError::Format { .. } | CoteachError::Io { .. } => 4,
        }
    }
}
