//! Penalty selection: K-fold cross-validation on the Frobenius loss and the
//! closed-form penalty rates.

use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{LorecError, Result};
use crate::estimators::{estimate_warm, threshold_offdiagonal, EstimatorKind, EstimatorSpec};
use crate::matrix::{sample_covariance, SymmetricMatrix};
use crate::model_gen::Seed;
use crate::solver::{Decomposition, SolverOptions};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_GRID_SIZE: usize = 10;
/// Lower end of the default grids as a fraction of their upper end.
pub const DEFAULT_GRID_FLOOR: f64 = 0.01;

/// Cartesian grid of nuclear-norm and ℓ1 penalties.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PenaltyGrid {
    lambda_values: Vec<f64>,
    rho_values: Vec<f64>,
}

impl PenaltyGrid {
    /// Validates positivity and sorts both axes ascending.
    pub fn new(mut lambda_values: Vec<f64>, mut rho_values: Vec<f64>) -> Result<Self> {
        for (name, values) in [("lambda", &lambda_values), ("rho", &rho_values)] {
            if values.is_empty() {
                return Err(LorecError::invalid(format!("{name} grid is empty")));
            }
            if let Some(bad) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(LorecError::invalid(format!("{name} grid value {bad} is not positive")));
            }
        }
        lambda_values.sort_by(f64::total_cmp);
        rho_values.sort_by(f64::total_cmp);
        Ok(PenaltyGrid {
            lambda_values,
            rho_values,
        })
    }

    /// `count` log-spaced λ over `[0.01, 1]·‖Σn‖₂` crossed with `count`
    /// log-spaced ρ over `[0.01, 1]·|Σn|_max`.
    pub fn default_for(sigma_n: &SymmetricMatrix, count: usize) -> Result<Self> {
        Self::scaled(sigma_n, count, DEFAULT_GRID_FLOOR)
    }

    /// As [`PenaltyGrid::default_for`] with both ranges starting at
    /// `floor` times their top instead of 0.01.
    pub fn scaled(sigma_n: &SymmetricMatrix, count: usize, floor: f64) -> Result<Self> {
        check_floor(floor)?;
        let lambda_top = sigma_n.operator_norm();
        let rho_top = sigma_n.max_abs();
        if !(lambda_top > 0.0) || !(rho_top > 0.0) {
            return Err(LorecError::invalid("cannot build a penalty grid for a zero covariance"));
        }
        Self::new(
            log_spaced(floor * lambda_top, lambda_top, count)?,
            log_spaced(floor * rho_top, rho_top, count)?,
        )
    }

    pub fn lambda_values(&self) -> &[f64] {
        &self.lambda_values
    }

    pub fn rho_values(&self) -> &[f64] {
        &self.rho_values
    }

    /// Specs for every grid point; `tau` selects the thresholded-input variant.
    pub fn candidates(&self, tau: Option<f64>) -> Vec<EstimatorSpec> {
        let mut out = Vec::with_capacity(self.lambda_values.len() * self.rho_values.len());
        for &lambda in &self.lambda_values {
            for &rho in &self.rho_values {
                out.push(match tau {
                    Some(tau) => EstimatorSpec::LorecThresholdedInput { tau, lambda, rho },
                    None => EstimatorSpec::Lorec { lambda, rho },
                });
            }
        }
        out
    }
}

fn check_floor(floor: f64) -> Result<()> {
    if floor > 0.0 && floor <= 1.0 {
        Ok(())
    } else {
        Err(LorecError::invalid(format!("grid floor must lie in (0, 1], got {floor}")))
    }
}

/// `count` points from `lo` to `hi` inclusive, evenly spaced on a log scale.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) || count == 0 {
        return Err(LorecError::invalid(format!(
            "bad log-spaced range [{lo}, {hi}] with {count} points"
        )));
    }
    if count == 1 {
        return Ok(vec![hi]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect())
}

/// Default tuning candidates for an estimator family.
///
/// `tau` fixes the input threshold of the thresholded-input variant
/// (required for that kind, ignored otherwise).
pub fn default_candidates(
    kind: EstimatorKind,
    sigma_n: &SymmetricMatrix,
    count: usize,
    tau: Option<f64>,
) -> Result<Vec<EstimatorSpec>> {
    candidates_for(kind, sigma_n, count, DEFAULT_GRID_FLOOR, tau)
}

/// As [`default_candidates`] with log-spaced ranges starting at `floor`
/// times their top. The shrinkage weights always cover `[0, 1]`.
pub fn candidates_for(
    kind: EstimatorKind,
    sigma_n: &SymmetricMatrix,
    count: usize,
    floor: f64,
    tau: Option<f64>,
) -> Result<Vec<EstimatorSpec>> {
    check_floor(floor)?;
    match kind {
        EstimatorKind::Lorec => Ok(PenaltyGrid::scaled(sigma_n, count, floor)?.candidates(None)),
        EstimatorKind::LorecThresholdedInput => {
            let tau = tau.ok_or_else(|| {
                LorecError::invalid("thresholded-input estimator needs an input threshold")
            })?;
            let thresholded = threshold_offdiagonal(sigma_n, tau)?;
            Ok(PenaltyGrid::scaled(&thresholded, count, floor)?.candidates(Some(tau)))
        }
        EstimatorKind::Sample => Ok(vec![EstimatorSpec::Sample {}]),
        EstimatorKind::HardThreshold => {
            let top = sigma_n.max_abs_offdiagonal();
            if top <= 0.0 {
                return Ok(vec![EstimatorSpec::HardThreshold { tau: 0.0 }]);
            }
            Ok(log_spaced(floor * top, top, count)?
                .into_iter()
                .map(|tau| EstimatorSpec::HardThreshold { tau })
                .collect())
        }
        EstimatorKind::ShrinkToIdentity => {
            let steps = count.max(2);
            Ok((0..steps)
                .map(|i| EstimatorSpec::ShrinkToIdentity {
                    w: i as f64 / (steps - 1) as f64,
                })
                .collect())
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CvRecord {
    pub spec: EstimatorSpec,
    pub fold: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CvOutcome {
    pub best: EstimatorSpec,
    pub best_mean_loss: f64,
    /// Candidates in canonical (ascending penalty) order with their mean loss.
    pub mean_losses: Vec<(EstimatorSpec, f64)>,
    pub table: Vec<CvRecord>,
}

impl CvOutcome {
    /// Loss table as CSV with one column per tuning parameter, then `fold,loss`.
    pub fn write_table_csv(&self, mut out: impl Write) -> Result<()> {
        let names: Vec<&str> = self.best.params().iter().map(|(n, _)| *n).collect();
        let mut header = names.clone();
        header.extend(["fold", "loss"]);
        writeln!(out, "{}", header.join(","))?;
        for row in &self.table {
            let mut cells: Vec<String> = row.spec.params().iter().map(|(_, v)| v.to_string()).collect();
            cells.push(row.fold.to_string());
            cells.push(row.loss.to_string());
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

fn cmp_keys(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            ord => return ord,
        }
    }
    a.len().cmp(&b.len())
}

/// Assigns each row to a fold: shuffle, then cut into contiguous groups.
pub fn fold_assignment(n: usize, folds: usize, seed: Seed) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(LorecError::invalid(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(LorecError::invalid(format!("{n} rows cannot fill {folds} folds")));
    }
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut seed.rng());
    let base = n / folds;
    let extra = n % folds;
    let mut groups = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        let mut group = rows[start..start + size].to_vec();
        group.sort_unstable();
        groups.push(group);
        start += size;
    }
    if let Some(small) = groups.iter().find(|g| g.len() < 2) {
        return Err(LorecError::invalid(format!(
            "fold with {} row(s); every fold needs at least 2",
            small.len()
        )));
    }
    Ok(groups)
}

fn select_rows(data: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    data.select_rows(rows.iter())
}

/// K-fold cross-validation over a list of candidate estimators.
///
/// For every candidate and fold the estimator is fit on the training rows'
/// sample covariance and scored by `|Σ̂ − Σ_holdout|_F²` against the
/// held-out rows' sample covariance. The candidate with the smallest mean
/// loss wins; exact ties go to the larger penalty. The low-rank plus sparse
/// fits are warm-started along the penalty path within each fold.
pub fn kfold_cv(
    data: &DMatrix<f64>,
    candidates: &[EstimatorSpec],
    folds: usize,
    seed: Seed,
    options: &SolverOptions,
) -> Result<CvOutcome> {
    if candidates.is_empty() {
        return Err(LorecError::invalid("no tuning candidates"));
    }
    for c in candidates {
        c.validate()?;
    }
    let groups = fold_assignment(data.nrows(), folds, seed)?;

    // canonical order: ascending penalty key, duplicates evaluated once
    let mut ordered: Vec<EstimatorSpec> = candidates.to_vec();
    ordered.sort_by(|a, b| {
        a.kind()
            .cmp(&b.kind())
            .then_with(|| cmp_keys(&a.penalty_key(), &b.penalty_key()))
    });
    let mut distinct: Vec<EstimatorSpec> = ordered.clone();
    distinct.dedup();

    let mut losses = vec![vec![0.0; folds]; distinct.len()];
    for (f, holdout_rows) in groups.iter().enumerate() {
        let training_rows: Vec<usize> = groups
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, rows)| rows.iter().copied())
            .collect();
        let train_cov = sample_covariance(&select_rows(data, &training_rows))?;
        let holdout_cov = sample_covariance(&select_rows(data, holdout_rows))?;

        // descending penalties; a new leading parameter restarts from the
        // first fit of the previous block
        let mut previous: Option<Decomposition> = None;
        let mut block_head: Option<Decomposition> = None;
        let mut last_lead: Option<f64> = None;
        for idx in (0..distinct.len()).rev() {
            let spec = &distinct[idx];
            let lead = spec.penalty_key().first().copied();
            let new_block = lead != last_lead;
            let warm = if new_block { block_head.as_ref() } else { previous.as_ref() };
            let fit = estimate_warm(spec, &train_cov, options, warm)?;
            let loss = (fit.covariance.as_matrix() - holdout_cov.as_matrix()).norm_squared();
            losses[idx][f] = loss;
            if new_block {
                block_head = fit.decomposition.clone();
                last_lead = lead;
            }
            previous = fit.decomposition;
        }
    }

    let means: Vec<f64> = losses
        .iter()
        .map(|row| row.iter().sum::<f64>() / folds as f64)
        .collect();
    let mut best = 0;
    for idx in 1..distinct.len() {
        // later entries carry larger penalties, so `<=` breaks ties upward
        if means[idx] <= means[best] {
            best = idx;
        }
    }

    let mut table = Vec::with_capacity(ordered.len() * folds);
    let mut mean_losses = Vec::with_capacity(ordered.len());
    for spec in &ordered {
        let idx = distinct.iter().position(|d| d == spec).expect("deduplicated candidate");
        mean_losses.push((*spec, means[idx]));
        for (f, loss) in losses[idx].iter().enumerate() {
            table.push(CvRecord {
                spec: *spec,
                fold: f,
                loss: *loss,
            });
        }
    }
    Ok(CvOutcome {
        best: distinct[best],
        best_mean_loss: means[best],
        mean_losses,
        table,
    })
}

/// Cross-validates the low-rank plus sparse estimator over a penalty grid.
pub fn kfold_cv_grid(
    data: &DMatrix<f64>,
    grid: &PenaltyGrid,
    folds: usize,
    kind: EstimatorKind,
    tau: Option<f64>,
    seed: Seed,
    options: &SolverOptions,
) -> Result<CvOutcome> {
    let candidates = match kind {
        EstimatorKind::Lorec => grid.candidates(None),
        EstimatorKind::LorecThresholdedInput => grid.candidates(Some(tau.ok_or_else(|| {
            LorecError::invalid("thresholded-input estimator needs an input threshold")
        })?)),
        other => {
            return Err(LorecError::invalid(format!(
                "a penalty grid does not apply to the {other} estimator"
            )))
        }
    };
    kfold_cv(data, &candidates, folds, seed, options)
}

/// Coherence constants of a low-rank / sparse pair and the ratio `γ = ρ/λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoherenceParams {
    /// Largest max-entry of a unit-spectral-norm element of the low-rank tangent space.
    pub xi: f64,
    /// Largest spectral norm of a unit-max-norm element with the sparse support.
    pub mu: f64,
    pub gamma: f64,
}

impl CoherenceParams {
    /// Checks positivity and, when `[9ξ, 1/(6μ)]` is nonempty, that `γ` lies in it.
    pub fn new(xi: f64, mu: f64, gamma: f64) -> Result<Self> {
        for (name, v) in [("xi", xi), ("mu", mu), ("gamma", gamma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(LorecError::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let (lo, hi) = (9.0 * xi, 1.0 / (6.0 * mu));
        if lo <= hi && !(lo..=hi).contains(&gamma) {
            return Err(LorecError::invalid(format!(
                "gamma = {gamma} outside the admissible interval [{lo}, {hi}]"
            )));
        }
        Ok(CoherenceParams { xi, mu, gamma })
    }
}

/// Penalty rates for `n ≥ p`:
/// `λ = c₁·max((1/ξ)√(log p / n), √(p/n))` and `ρ = γλ`.
pub fn theoretical_penalty(
    coherence: &CoherenceParams,
    n: usize,
    p: usize,
    scale_c1: f64,
) -> Result<(f64, f64)> {
    if p < 2 {
        return Err(LorecError::invalid("dimension must be at least 2"));
    }
    if n < p {
        return Err(LorecError::invalid(format!(
            "n = {n} < p = {p} is outside the n >= p regime; use spike_theoretical_penalty \
             with a thresholded input instead"
        )));
    }
    let (n, p) = (n as f64, p as f64);
    let lambda = scale_c1 * ((1.0 / coherence.xi) * (p.ln() / n).sqrt()).max((p / n).sqrt());
    Ok((lambda, coherence.gamma * lambda))
}

/// Upper bound `2/√k` on the low-rank coherence of a `k`-sparse spike.
pub fn spike_xi_bound(k: usize) -> f64 {
    2.0 / (k as f64).sqrt()
}

/// Sparse-support coherence of the spiked model, equal to the row sparsity `s`.
pub fn spike_mu(s: usize) -> f64 {
    s as f64
}

/// Penalties for the thresholded-input estimator on a spiked model:
/// `λ = c₂(k+s)√(log p / n)`, `ρ = c₃(√k + √(s/k))√(log p / n)` and input
/// threshold `τ = √(log p / n)`.
pub fn spike_theoretical_penalty(
    k: usize,
    s: usize,
    n: usize,
    p: usize,
    scale_c2: f64,
    scale_c3: f64,
) -> Result<(f64, f64, f64)> {
    if k < 1 || s < 1 || n < 2 || p < 2 {
        return Err(LorecError::invalid(format!(
            "need k >= 1, s >= 1, n >= 2, p >= 2 (got k={k}, s={s}, n={n}, p={p})"
        )));
    }
    let rate = ((p as f64).ln() / n as f64).sqrt();
    let (k, s) = (k as f64, s as f64);
    let lambda = scale_c2 * (k + s) * rate;
    let rho = scale_c3 * (k.sqrt() + (s / k).sqrt()) * rate;
    Ok((lambda, rho, rate))
}
