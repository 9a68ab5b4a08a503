use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CamError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CamError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("detector backend: {0}")]
    BackendIo(String),

    #[error("masked run for channel {channel} failed: {source}")]
    Pipeline {
        channel: usize,
        #[source]
        source: Box<CamError>,
    },

    #[error(
        "power iteration did not converge after {iterations} iterations (last delta {delta:e})"
    )]
    Numeric { iterations: usize, delta: f64 },

    #[error("malformed tensor file: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CamError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CamError::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CamError::Io {
            path: path.into(),
            source,
        }
    }
}
