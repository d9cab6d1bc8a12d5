use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Geometry or model input that violates a structural invariant.
    #[error("invalid structure: {0}")]
    Structure(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    /// A callback produced NaN or infinity.
    #[error("non-finite value in {what} (index {index})")]
    NonFinite { what: &'static str, index: usize },
    #[error("contact resolution failed at step {step}: {reason}")]
    ContactResolution { step: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
