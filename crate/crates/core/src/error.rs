use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A coefficient or state became NaN/inf; the replication is aborted.
    #[error("non-finite {what} at path {path}, step {step}")]
    NonFinite {
        what: &'static str,
        path: usize,
        step: usize,
    },

    #[error("model construction error: {0}")]
    Model(String),

    #[error("degenerate zero series: {0}")]
    DegenerateSeries(String),

    #[error("corrupt ensemble file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
