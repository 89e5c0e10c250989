use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FdpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FdpError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed image header: {0}")]
    MalformedHeader(String),

    #[error("truncated image payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("class {class} has no samples")]
    EmptyClass { class: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("class table mismatch: checkpoint has {checkpoint} classes, manifest has {manifest}")]
    ClassMismatch { checkpoint: usize, manifest: usize },

    #[error("gradient check failed: {0}")]
    GradientCheck(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },
}

impl FdpError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        FdpError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            FdpError::InvalidArgument(_) | FdpError::Config(_) => 1,
            FdpError::NonFinite { .. } | FdpError::Diverged { .. } | FdpError::GradientCheck(_) => 3,
            _ => 2,
        }
    }
}
