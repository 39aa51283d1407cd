use std::path::PathBuf;

/// Errors produced by the set flow library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value{}: {what}", stack.map(|k| format!(" in stack {k}")).unwrap_or_default())]
    Numeric { stack: Option<usize>, what: String },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
