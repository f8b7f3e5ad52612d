use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error taxonomy for the whole crate.
///
/// `Shape`/`Index`/`Contract` are caller bugs (violated preconditions),
/// `Config` is a rejected model or request configuration, and
/// `Determinism`/`Equivalence` are hard failures raised by the benchmark
/// harness when repeated or compared decodes disagree.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("determinism failure: {0}")]
    Determinism(String),

    #[error("equivalence failure: {0}")]
    Equivalence(String),
}
