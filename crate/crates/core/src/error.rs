use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An operation received arguments that violate its shape or index contract.
    #[error("contract violation in {op}: {detail}")]
    Contract { op: &'static str, detail: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("image decode error: {0}")]
    Decode(String),

    #[error("image {height}x{width} is too small for a {needed}x{needed} patch")]
    ImageTooSmall { height: usize, width: usize, needed: usize },

    #[error("checkpoint: bad magic bytes")]
    BadMagic,

    #[error("checkpoint: format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint: file truncated while reading {0}")]
    Truncated(&'static str),

    #[error("checkpoint: unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("checkpoint: parameter `{0}` missing")]
    MissingParameter(String),

    #[error("checkpoint: parameter `{name}` has shape {found:?}, model expects {expected:?}")]
    ParameterShape {
        name: String,
        found: [usize; 4],
        expected: [usize; 4],
    },

    #[error("checkpoint: {0}")]
    Corrupt(String),

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("non-finite loss at iteration {iteration}; largest |grad| in `{parameter}`")]
    NonFiniteLoss { iteration: u64, parameter: String },

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),
}

impl Error {
    pub(crate) fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract {
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
}
