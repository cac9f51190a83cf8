use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("non-finite state component {index} = {value}")]
    NonFiniteState { index: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("trajectory exploded at t = {time}; no average exists")]
    Exploded { time: f64 },

    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("linear solver failed: {reason} (condition estimate {condition:.3e})")]
    Solver { reason: String, condition: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
