use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("not a rotation matrix: {0}")]
    InvalidRotation(String),

    #[error("zero quaternion has no rotation")]
    ZeroQuaternion,

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("batch-norm statistics for `{0}` are uninitialized; run at least one training step")]
    UninitializedStats(String),

    #[error("degenerate point configuration: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
