use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration value, unknown key or violated precondition on a setting.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed corpus, vocabulary or inconsistent data.
    #[error("data error: {0}")]
    Data(String),

    /// NaN/inf encountered in a loss or gradient; training must stop.
    #[error("numeric abort: {0}")]
    Numeric(String),

    /// Tensor shapes that do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported checkpoint version {found:?} (expected {expected:?})")]
    CheckpointVersion { found: String, expected: &'static str },

    #[error("corrupt checkpoint {path}: {reason}")]
    CheckpointCorrupt { path: PathBuf, reason: String },

    #[error("checkpoint shape mismatch: {0}")]
    CheckpointShape(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
