use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by corpus handling, training, and inference.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("data error at {path}:{line}: {msg}")]
    Data {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("wordlist {path} yields an empty lexicon")]
    EmptyLexicon { path: PathBuf },

    #[error("fetch of {url} failed: {msg}")]
    Fetch { url: String, msg: String },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid graph use: {0}")]
    Graph(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("input of {len} tokens exceeds max sequence length {max}")]
    InputTooLong { len: usize, max: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("invalid corpus pair: {0}")]
    InvalidPair(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn data(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
