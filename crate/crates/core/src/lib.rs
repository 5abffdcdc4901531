//! Low-rank plus sparse covariance estimation.

pub mod error;
pub mod estimators;
pub mod matrix;
pub mod metrics;
pub mod model_gen;
pub mod portfolio;
pub mod solver;
pub mod tuning;

pub use error::{LorecError, Result};
pub use matrix::SymmetricMatrix;
