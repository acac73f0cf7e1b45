use std::path::PathBuf;

/// Failure category, used by callers (the CLI in particular) to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad shapes, bad configuration, bad input values.
    Validation,
    /// Filesystem failures and malformed on-disk formats.
    Io,
    /// NaN or non-finite values produced during numeric work.
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("age {age} falls outside every bin of scheme {scheme}")]
    NoBin { age: u32, scheme: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format { path: path.into(), detail: detail.into() }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Shape(_) | Error::Config(_) | Error::Data(_) | Error::NoBin { .. } => {
                ErrorKind::Validation
            }
            Error::Io { .. } | Error::Format { .. } => ErrorKind::Io,
            Error::Numerical(_) => ErrorKind::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
