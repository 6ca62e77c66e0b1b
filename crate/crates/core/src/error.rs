use std::path::PathBuf;

/// Errors produced anywhere in the simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes that cannot be combined.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    /// Invalid configuration, detected before any work starts.
    #[error("configuration error: {0}")]
    Config(String),
    /// A text label outside the closed object vocabulary.
    #[error("unknown label `{0}` (vocabulary: rect, ellipse, cross)")]
    Vocabulary(String),
    /// Malformed input file.
    #[error("parse error in {}: {msg}", path.display())]
    Parse { path: PathBuf, msg: String },
    /// Numerical breakdown (singular systems, non-finite losses).
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
