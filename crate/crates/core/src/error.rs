use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed or inconsistent input data.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("age {0} outside the supported range 0..=99")]
    AgeOutOfRange(u32),

    /// The constraint system `S V S'` lost rank at the given constrained age.
    #[error("singular constraint system: rank deficiency at age {age}")]
    SingularSystem { age: u32 },

    /// Clamping to the probability simplex kept recurring during alignment.
    #[error("alignment could not be kept feasible after {rounds} clamping rounds")]
    ClampingExhausted { rounds: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// True for errors caused by bad input rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::Domain(_)
                | Error::DimensionMismatch { .. }
                | Error::AgeOutOfRange(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}
