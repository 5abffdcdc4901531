use lorec::LorecError;
use thiserror::Error;

pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Lorec(#[from] LorecError),

    #[error("{0}")]
    Usage(String),

    #[error("check suite {suite} failed with {failures} failing case(s)")]
    CheckFailed { suite: String, failures: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("cannot start worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Lorec(
                LorecError::Singular { .. }
                | LorecError::NumericFailure(_)
                | LorecError::DegenerateConstraint { .. },
            ) => EXIT_NUMERIC,
            CliError::CheckFailed { .. } => EXIT_CHECK_FAILED,
            _ => EXIT_INVALID,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
