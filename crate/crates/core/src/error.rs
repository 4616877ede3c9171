use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (model, prior, sweep grid).
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called outside its domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// A size cap was exceeded (enumeration, permanent, assignment).
    #[error("resource limit: {0}")]
    Resource(String),

    #[error("unsupported prior: {0}")]
    UnsupportedPrior(String),

    /// Malformed input file; `row` is 1-based and counts the header.
    #[error("{path}: row {row}: {message}")]
    Format {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

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

    /// Process exit status for the CLI: 2 for usage-class errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Argument(_) | Error::Resource(_) | Error::UnsupportedPrior(_) => 2,
            _ => 1,
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $kind:ident, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err($crate::error::Error::$kind(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;
