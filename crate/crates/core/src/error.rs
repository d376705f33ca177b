use crate::model::Violation;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid subspace: {0}")]
    InvalidSubspace(String),

    #[error("unknown reward dimension `{0}`")]
    UnknownDimension(String),

    #[error("probability {0} outside the open interval (0, 1)")]
    ProbabilityOutOfRange(f64),

    #[error("non-finite value {value} at position {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("no global scale for reward dimension {0}")]
    MissingScale(String),

    #[error("subspace mismatch: expected {expected}, got {actual}")]
    SubspaceMismatch { expected: String, actual: String },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("`{name}` = {value} outside [0, 1]")]
    OutOfUnitRange { name: &'static str, value: f64 },

    #[error("no gating rule configured for task `{0}`")]
    MissingPolicy(String),

    #[error("weight vector is zero")]
    ZeroVector,

    #[error("invalid batch ({} violation(s)); first: {}", .0.len(), .0.first().map(ToString::to_string).unwrap_or_default())]
    InvalidBatch(Vec<Violation>),

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("{}: {source}", .path.display())]
    Io { path: std::path::PathBuf, source: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { path: path.into(), reason: reason.into() }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}
