use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("index {index} out of range for {what} of size {len}")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("backward already ran on this tape; record a new one")]
    TapeConsumed,

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("invalid side information: {0}")]
    SideInfo(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Model(String),

    #[error("non-finite loss {loss} in episode with seed {seed:#018x}")]
    NonFiniteLoss { loss: f64, seed: u64 },

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
