use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input: a pmf that does not normalize, an out-of-range
    /// parameter, inconsistent table shapes.
    #[error("validation error: {0}")]
    Validation(String),

    /// The exact enumeration would exceed the configured term budget.
    #[error("enumeration of {terms} terms exceeds the limit of {limit}")]
    Resource { terms: u128, limit: u128 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A mathematical identity or inequality failed numerically.
    #[error("invariant `{name}` violated: {detail}")]
    InvariantViolated { name: String, detail: String },

    #[error("insufficient data: needed {needed} points, source holds {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn invariant(name: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::InvariantViolated {
            name: name.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
