use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward seed must be a scalar node, got shape {0}")]
    SeedNotScalar(String),

    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("infeasible bounds: {0}")]
    InfeasibleBounds(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("{0} out of range")]
    OutOfRange(String),

    /// Configuration or cross-field validation failure; `field` names the offending key.
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("training diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },

    #[error("malformed network file: {0}")]
    Format(String),

    #[error("unsupported network file version `{0}`")]
    Version(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for failures caused by the numbers rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::Divergence { .. } | Error::NotPositiveDefinite { .. }
        )
    }
}
