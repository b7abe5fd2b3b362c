use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent shapes or hyperparameters; maps to the CLI usage exit code.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Invalid sample contents, e.g. a label outside the class range.
    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("autograd: {0}")]
    Autograd(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic bytes (expected {expected:?})")]
    Magic { path: PathBuf, expected: &'static str },

    #[error("{path}: unsupported format version {found} (expected {expected})")]
    Version { path: PathBuf, found: u8, expected: u8 },

    #[error("{path}: truncated file ({detail})")]
    Truncated { path: PathBuf, detail: String },

    #[error("{path}: malformed content ({detail})")]
    Format { path: PathBuf, detail: String },

    #[error("checkpoint config hash {found:016x} does not match expected {expected:016x}")]
    ConfigHash { found: u64, expected: u64 },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by a numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }

    /// True for errors raised while touching the filesystem or decoding files.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Magic { .. }
                | Error::Version { .. }
                | Error::Truncated { .. }
                | Error::Format { .. }
                | Error::ConfigHash { .. }
        )
    }
}
