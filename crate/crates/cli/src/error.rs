use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("bad magic {found:?}, expected {expected}")]
    BadMagic {
        found: String,
        expected: &'static str,
    },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("maxval {0} is not supported, expected 255")]
    Maxval(u32),
    #[error("truncated pixel data: {got} of {expected} bytes")]
    Truncated { expected: usize, got: usize },
    #[error("image is {width}x{height}, config expects {expected}x{expected}")]
    SizeMismatch {
        expected: usize,
        width: usize,
        height: usize,
    },
    #[error("heatmap value {0} outside [0, 1]")]
    Range(f64),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ImageError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] mmel_core::Error),
}

impl CliError {
    /// 2 for usage and configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
