use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("abscissae must be strictly ascending from 0 to 1: {0}")]
    Ordering(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    Vocabulary { id: u32, vocab_size: usize },

    #[error("vector is not unit-normalized (norm {norm})")]
    Normalization { norm: f64 },

    #[error("inconsistent inputs: {0}")]
    Consistency(String),

    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("weight file: bad magic")]
    BadMagic,

    #[error("weight file: truncated ({0})")]
    Truncated(String),

    #[error("weight file: directory mismatch ({0})")]
    Directory(String),

    #[error("weight file: malformed header ({0})")]
    Header(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
