use std::path::PathBuf;

/// Errors raised across the model, data, and evaluation layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value is outside its allowed range.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller-supplied data is malformed (wrong size, non-binary mask, ...).
    #[error("input error: {0}")]
    Input(String),

    /// Two internal values disagree on shape or count.
    #[error("contract error: {0}")]
    Contract(String),

    /// The scoring vector has zero norm, so scores are undefined.
    #[error("degenerate scorer: scoring vector has zero norm")]
    DegenerateScorer,

    /// A loss term became NaN or infinite during training.
    #[error("non-finite loss at step {step}: first bad term is {term}")]
    NonFinite { step: usize, term: String },

    #[error("io error at {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png decode error at {path}: {message}")]
    Png { path: PathBuf, message: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! contract {
    ($($arg:tt)*) => { $crate::error::Error::Contract(format!($($arg)*)) };
}
pub(crate) use contract;
