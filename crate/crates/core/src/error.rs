use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error)]
pub enum LorecError {
    /// Caller supplied an argument outside the documented domain.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Matrix too close to singular for the requested inverse.
    #[error("matrix is singular: eigenvalue {eigenvalue:e} at index {index} is below the relative cutoff {cutoff:e}")]
    Singular {
        eigenvalue: f64,
        index: usize,
        cutoff: f64,
    },

    /// A numerical routine failed to produce a finite result.
    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// The return constraint cannot be honoured (expected returns parallel to the budget vector).
    #[error("degenerate return constraint: A1*A3 - A2^2 = {determinant:e}")]
    DegenerateConstraint { determinant: f64 },

    /// Operation precondition violated on otherwise well-formed input.
    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LorecError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        LorecError::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, LorecError>;
