use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },

    #[error("base path too short: need {needed} states, have {available}")]
    PathTooShort { needed: usize, available: usize },

    #[error("candidate cloud is empty")]
    EmptyCloud,

    #[error("cloud of {cardinality:.3e} points exceeds the cap of {cap:.3e}")]
    CloudTooLarge { cardinality: f64, cap: f64 },

    #[error("shape mismatch: expected {expected} coordinates, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: &'static str, index: u64 },

    #[error("epsilon must lie in (0, 1), got {0}")]
    Epsilon(f64),

    #[error("potential bound violated: |f| = {value} > declared bound {bound}")]
    BoundViolation { value: f64, bound: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("optimizer diverged after {evaluations} evaluations")]
    Divergence { evaluations: usize, trace: Vec<f64> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}
