//! Covariance estimators behind one interface: the low-rank plus sparse
//! estimator (on the sample covariance or on its hard-thresholded version)
//! and the sample / thresholding / shrinkage baselines.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LorecError, Result};
use crate::matrix::{hard_threshold, sample_covariance, spectral_factorize, SymmetricMatrix};
use crate::solver::{solve, solve_from, Decomposition, SolverConfig, SolverOptions, SolverResult, SUPPORT_CUTOFF};

/// Which estimator to run, with its tuning parameters.
///
/// Serializes as `{"kind": "...", "params": {...}}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum EstimatorSpec {
    Lorec { lambda: f64, rho: f64 },
    LorecThresholdedInput { tau: f64, lambda: f64, rho: f64 },
    Sample {},
    HardThreshold { tau: f64 },
    ShrinkToIdentity { w: f64 },
}

/// The estimator family without parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Lorec,
    LorecThresholdedInput,
    Sample,
    HardThreshold,
    ShrinkToIdentity,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Lorec => "lorec",
            EstimatorKind::LorecThresholdedInput => "lorec_thresholded_input",
            EstimatorKind::Sample => "sample",
            EstimatorKind::HardThreshold => "hard_threshold",
            EstimatorKind::ShrinkToIdentity => "shrink_to_identity",
        }
    }

    pub fn all() -> [EstimatorKind; 5] {
        [
            EstimatorKind::Lorec,
            EstimatorKind::LorecThresholdedInput,
            EstimatorKind::Sample,
            EstimatorKind::HardThreshold,
            EstimatorKind::ShrinkToIdentity,
        ]
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = LorecError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lorec" => Ok(EstimatorKind::Lorec),
            "lorec_thresholded_input" | "lorec-th" => Ok(EstimatorKind::LorecThresholdedInput),
            "sample" => Ok(EstimatorKind::Sample),
            "hard_threshold" | "threshold" => Ok(EstimatorKind::HardThreshold),
            "shrink_to_identity" | "shrinkage" => Ok(EstimatorKind::ShrinkToIdentity),
            other => Err(LorecError::invalid(format!("unknown estimator {other:?}"))),
        }
    }
}

impl EstimatorSpec {
    pub fn kind(&self) -> EstimatorKind {
        match self {
            EstimatorSpec::Lorec { .. } => EstimatorKind::Lorec,
            EstimatorSpec::LorecThresholdedInput { .. } => EstimatorKind::LorecThresholdedInput,
            EstimatorSpec::Sample {} => EstimatorKind::Sample,
            EstimatorSpec::HardThreshold { .. } => EstimatorKind::HardThreshold,
            EstimatorSpec::ShrinkToIdentity { .. } => EstimatorKind::ShrinkToIdentity,
        }
    }

    /// Parameter names and values in a fixed order.
    pub fn params(&self) -> Vec<(&'static str, f64)> {
        match *self {
            EstimatorSpec::Lorec { lambda, rho } => vec![("lambda", lambda), ("rho", rho)],
            EstimatorSpec::LorecThresholdedInput { tau, lambda, rho } => {
                vec![("tau", tau), ("lambda", lambda), ("rho", rho)]
            }
            EstimatorSpec::Sample {} => vec![],
            EstimatorSpec::HardThreshold { tau } => vec![("tau", tau)],
            EstimatorSpec::ShrinkToIdentity { w } => vec![("w", w)],
        }
    }

    /// Ordering key used for tie-breaks: larger means more regularization.
    pub fn penalty_key(&self) -> Vec<f64> {
        self.params().into_iter().map(|(_, v)| v).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(LorecError::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(LorecError::invalid(format!("{name} must be nonnegative, got {v}")))
            }
        };
        match *self {
            EstimatorSpec::Lorec { lambda, rho } => {
                positive("lambda", lambda)?;
                positive("rho", rho)
            }
            EstimatorSpec::LorecThresholdedInput { tau, lambda, rho } => {
                nonneg("tau", tau)?;
                positive("lambda", lambda)?;
                positive("rho", rho)
            }
            EstimatorSpec::Sample {} => Ok(()),
            EstimatorSpec::HardThreshold { tau } => nonneg("tau", tau),
            EstimatorSpec::ShrinkToIdentity { w } => {
                if (0.0..=1.0).contains(&w) {
                    Ok(())
                } else {
                    Err(LorecError::invalid(format!("shrinkage weight must lie in [0, 1], got {w}")))
                }
            }
        }
    }
}

/// Output of an estimator.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub covariance: SymmetricMatrix,
    /// Present for the low-rank plus sparse estimators.
    pub decomposition: Option<Decomposition>,
    pub solver: Option<SolverResult>,
}

/// Runs `spec` on an `n × p` observation matrix.
pub fn estimate(spec: &EstimatorSpec, data: &DMatrix<f64>, options: &SolverOptions) -> Result<Estimate> {
    spec.validate()?;
    let sigma_n = sample_covariance(data)?;
    estimate_from_covariance(spec, &sigma_n, options)
}

/// Runs `spec` on an already computed sample covariance.
pub fn estimate_from_covariance(
    spec: &EstimatorSpec,
    sigma_n: &SymmetricMatrix,
    options: &SolverOptions,
) -> Result<Estimate> {
    fit(spec, sigma_n, options, None)
}

/// Like [`estimate_from_covariance`] but the solver starts from `warm`
/// instead of the default point. Baselines ignore `warm`.
pub fn estimate_warm(
    spec: &EstimatorSpec,
    sigma_n: &SymmetricMatrix,
    options: &SolverOptions,
    warm: Option<&Decomposition>,
) -> Result<Estimate> {
    fit(spec, sigma_n, options, warm)
}

fn fit(
    spec: &EstimatorSpec,
    sigma_n: &SymmetricMatrix,
    options: &SolverOptions,
    warm: Option<&Decomposition>,
) -> Result<Estimate> {
    spec.validate()?;
    let plain = |covariance| Estimate {
        covariance,
        decomposition: None,
        solver: None,
    };
    match *spec {
        EstimatorSpec::Lorec { lambda, rho } => run_lorec(sigma_n, lambda, rho, options, warm),
        EstimatorSpec::LorecThresholdedInput { tau, lambda, rho } => {
            let thresholded = hard_threshold(sigma_n, tau)?;
            run_lorec(&thresholded, lambda, rho, options, warm)
        }
        EstimatorSpec::Sample {} => Ok(plain(sigma_n.clone())),
        EstimatorSpec::HardThreshold { tau } => Ok(plain(threshold_offdiagonal(sigma_n, tau)?)),
        EstimatorSpec::ShrinkToIdentity { w } => Ok(plain(shrink_to_identity(sigma_n, w)?)),
    }
}

fn run_lorec(
    input: &SymmetricMatrix,
    lambda: f64,
    rho: f64,
    options: &SolverOptions,
    warm: Option<&Decomposition>,
) -> Result<Estimate> {
    let config = SolverConfig::with_options(lambda, rho, options)?;
    let result = match warm {
        Some(w) if w.dim() == input.dim() => {
            solve_from(input, &config, w.low_rank().clone(), w.sparse().clone())?
        }
        _ => solve(input, &config)?,
    };
    Ok(Estimate {
        covariance: result.estimate.combined(),
        decomposition: Some(result.estimate.clone()),
        solver: Some(result),
    })
}

/// Hard-thresholds the off-diagonal entries; the diagonal is always kept.
pub fn threshold_offdiagonal(sigma_n: &SymmetricMatrix, tau: f64) -> Result<SymmetricMatrix> {
    let thresholded = hard_threshold(sigma_n, tau)?;
    Ok(thresholded.map_entries(|i, j, v| if i == j { sigma_n[(i, i)] } else { v }))
}

/// `(1 − w)·Σn + w·(tr(Σn)/p)·I`.
pub fn shrink_to_identity(sigma_n: &SymmetricMatrix, w: f64) -> Result<SymmetricMatrix> {
    if !(0.0..=1.0).contains(&w) {
        return Err(LorecError::invalid(format!("shrinkage weight must lie in [0, 1], got {w}")));
    }
    let target = sigma_n.trace() / sigma_n.dim() as f64;
    Ok(sigma_n.map_entries(|i, j, v| {
        if i == j {
            (1.0 - w) * v + w * target
        } else {
            (1.0 - w) * v
        }
    }))
}

/// Recovers the support of a rank-one spike from its low-rank estimate.
///
/// Forms `ûûᵀ` from the leading eigenvector, hard-thresholds it at
/// `1/(2k)` and returns the row indices with a surviving entry.
pub fn spike_support_recovery(low_rank: &SymmetricMatrix, k: usize) -> Result<BTreeSet<usize>> {
    if k < 1 {
        return Err(LorecError::invalid("spike sparsity k must be at least 1"));
    }
    let spec = spectral_factorize(low_rank)?;
    let rank = spec.eigenvalues.iter().filter(|v| v.abs() > SUPPORT_CUTOFF).count();
    if rank != 1 {
        return Err(LorecError::Precondition(format!(
            "spike support recovery needs a rank-one input, observed rank {rank}"
        )));
    }
    let lead = (0..spec.dim())
        .max_by(|&a, &b| spec.eigenvalues[a].abs().total_cmp(&spec.eigenvalues[b].abs()))
        .expect("nonempty spectrum");
    let u = spec.eigenvector(lead);
    let level = 1.0 / (2.0 * k as f64);
    let p = u.len();
    Ok((0..p)
        .filter(|&i| (0..p).any(|j| (u[i] * u[j]).abs() >= level))
        .collect())
}
