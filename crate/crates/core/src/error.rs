use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, ranges or options that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical divergence at layer {layer}: {what}")]
    Divergence { layer: usize, what: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{path}: bad magic number, expected {expected}, found {actual}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        actual: u32,
    },

    #[error("{path}: truncated file, expected {expected} bytes of payload, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("inconsistent data: {0}")]
    Inconsistent(String),

    #[error("index {index} out of bounds (len {len})")]
    OutOfBounds { index: usize, len: usize },

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
