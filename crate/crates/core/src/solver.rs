//! Accelerated proximal-gradient solver for the low-rank plus sparse objective
//!
//! ```text
//! F(L, S) = ½ |L + S − Σ|_F² + λ ‖L‖_* + ρ |S|₁
//! ```
//!
//! The smooth part has the same gradient `L + S − Σ` in both blocks, with
//! Lipschitz constant 2. The linearized subproblem separates into a
//! singular-value soft-threshold for `L` and an entrywise soft-threshold for
//! `S`, and consecutive iterates are mixed with Nesterov momentum.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{LorecError, Result};
use crate::matrix::{
    shrink_spectrum, soft_threshold_masked, spectral_factorize, SymmetricMatrix,
};

/// Magnitude above which a singular value or sparse entry is reported as nonzero.
pub const SUPPORT_CUTOFF: f64 = 1e-3;

/// Lipschitz constant of the gradient of the smooth loss.
pub const LIPSCHITZ: f64 = 2.0;

pub const DEFAULT_EPSILON: f64 = 1e-4;
pub const DEFAULT_MAX_ITER: usize = 5000;

/// Solver settings other than the two penalties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    /// Fixed inverse step size; must be at least the Lipschitz constant.
    pub step_l: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    /// When false the ℓ1 penalty only applies to off-diagonal entries of `S`.
    pub penalize_diagonal: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            step_l: LIPSCHITZ,
            epsilon: DEFAULT_EPSILON,
            max_iter: DEFAULT_MAX_ITER,
            penalize_diagonal: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_l >= LIPSCHITZ) {
            return Err(LorecError::invalid(format!(
                "step constant must be at least {LIPSCHITZ}, got {}",
                self.step_l
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(LorecError::invalid(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.max_iter == 0 {
            return Err(LorecError::invalid("max_iter must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    /// Nuclear-norm weight.
    pub lambda: f64,
    /// ℓ1 weight.
    pub rho: f64,
    pub step_l: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub penalize_diagonal: bool,
}

impl SolverConfig {
    /// Penalties with default options.
    pub fn new(lambda: f64, rho: f64) -> Result<Self> {
        Self::with_options(lambda, rho, &SolverOptions::default())
    }

    pub fn with_options(lambda: f64, rho: f64, options: &SolverOptions) -> Result<Self> {
        let config = SolverConfig {
            lambda,
            rho,
            step_l: options.step_l,
            epsilon: options.epsilon,
            max_iter: options.max_iter,
            penalize_diagonal: options.penalize_diagonal,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            step_l: self.step_l,
            epsilon: self.epsilon,
            max_iter: self.max_iter,
            penalize_diagonal: self.penalize_diagonal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(LorecError::invalid(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(LorecError::invalid(format!(
                "rho must be positive, got {}",
                self.rho
            )));
        }
        self.options().validate()
    }
}

/// A low-rank / sparse pair with its reported rank and support.
#[derive(Debug, Clone)]
pub struct Decomposition {
    low_rank: SymmetricMatrix,
    sparse: SymmetricMatrix,
    rank: usize,
    support: BTreeSet<(usize, usize)>,
}

impl Decomposition {
    pub fn new(low_rank: SymmetricMatrix, sparse: SymmetricMatrix) -> Result<Self> {
        if low_rank.dim() != sparse.dim() {
            return Err(LorecError::invalid(format!(
                "low-rank part is {0}x{0} but sparse part is {1}x{1}",
                low_rank.dim(),
                sparse.dim()
            )));
        }
        let rank = spectral_factorize(&low_rank)?
            .eigenvalues
            .iter()
            .filter(|v| v.abs() > SUPPORT_CUTOFF)
            .count();
        let p = sparse.dim();
        let support = (0..p)
            .flat_map(|i| (0..p).map(move |j| (i, j)))
            .filter(|&(i, j)| sparse[(i, j)].abs() > SUPPORT_CUTOFF)
            .collect();
        Ok(Decomposition {
            low_rank,
            sparse,
            rank,
            support,
        })
    }

    pub fn low_rank(&self) -> &SymmetricMatrix {
        &self.low_rank
    }

    pub fn sparse(&self) -> &SymmetricMatrix {
        &self.sparse
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Index pairs `(i, j)` with `|S_ij| > 1e-3`, both triangles included.
    pub fn support(&self) -> &BTreeSet<(usize, usize)> {
        &self.support
    }

    pub fn dim(&self) -> usize {
        self.low_rank.dim()
    }

    /// The covariance estimate `L + S`.
    pub fn combined(&self) -> SymmetricMatrix {
        &self.low_rank + &self.sparse
    }
}

#[derive(Debug, Clone)]
pub struct SolverResult {
    pub estimate: Decomposition,
    pub iterations: usize,
    /// `F(L_t, S_t)` for `t = 1..=iterations`.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// `α_t` for `t = 1..=iterations`.
    pub momentum_trace: Vec<f64>,
    pub lambda: f64,
    pub rho: f64,
    pub penalize_diagonal: bool,
}

/// JSON summary of a solve.
#[derive(Debug, Clone, Serialize)]
pub struct SolverSummary {
    pub lambda: f64,
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
    pub rank: usize,
    pub support_size: usize,
}

impl SolverResult {
    pub fn summary(&self) -> SolverSummary {
        SolverSummary {
            lambda: self.lambda,
            rho: self.rho,
            iterations: self.iterations,
            converged: self.converged,
            objective_trace: self.objective_trace.clone(),
            rank: self.estimate.rank(),
            support_size: self.estimate.support().len(),
        }
    }

    pub fn final_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.windows(2).any(|w| w[0] != w[1]) {
        return Err(LorecError::invalid(format!("dimension mismatch: {dims:?}")));
    }
    Ok(())
}

fn l1_penalty(s: &SymmetricMatrix, penalize_diagonal: bool) -> f64 {
    let p = s.dim();
    let m = s.as_matrix();
    let mut total = 0.0;
    for j in 0..p {
        for i in 0..p {
            if i != j || penalize_diagonal {
                total += m[(i, j)].abs();
            }
        }
    }
    total
}

/// `½|L + S − Σ|_F² + λ‖L‖_* + ρ|S|₁`; the ℓ1 term skips the diagonal when
/// `penalize_diagonal` is false.
pub fn objective(
    low_rank: &SymmetricMatrix,
    sparse: &SymmetricMatrix,
    sigma: &SymmetricMatrix,
    lambda: f64,
    rho: f64,
    penalize_diagonal: bool,
) -> Result<f64> {
    check_dims(&[low_rank.dim(), sparse.dim(), sigma.dim()])?;
    let nuclear = low_rank.nuclear_norm();
    Ok(objective_with_nuclear(
        low_rank,
        sparse,
        sigma,
        lambda,
        rho,
        penalize_diagonal,
        nuclear,
    ))
}

fn objective_with_nuclear(
    low_rank: &SymmetricMatrix,
    sparse: &SymmetricMatrix,
    sigma: &SymmetricMatrix,
    lambda: f64,
    rho: f64,
    penalize_diagonal: bool,
    nuclear: f64,
) -> f64 {
    let residual = low_rank.as_matrix() + sparse.as_matrix() - sigma.as_matrix();
    0.5 * residual.norm_squared() + lambda * nuclear + rho * l1_penalty(sparse, penalize_diagonal)
}

/// Gradient `L + S − Σ` of the smooth loss, shared by both blocks.
pub fn gradient(
    low_rank: &SymmetricMatrix,
    sparse: &SymmetricMatrix,
    sigma: &SymmetricMatrix,
) -> Result<SymmetricMatrix> {
    check_dims(&[low_rank.dim(), sparse.dim(), sigma.dim()])?;
    Ok(&(low_rank + sparse) - sigma)
}

/// Default starting point `(diag(Σ)/2, diag(Σ)/2)`.
pub fn initial_point(sigma: &SymmetricMatrix) -> (SymmetricMatrix, SymmetricMatrix) {
    let half = &sigma.diagonal_part() * 0.5;
    (half.clone(), half)
}

/// Next momentum weight `(1 + √(1 + 4α²)) / 2`.
#[inline]
pub fn next_momentum(alpha: f64) -> f64 {
    (1.0 + (1.0 + 4.0 * alpha * alpha).sqrt()) / 2.0
}

/// Solves the problem from the default starting point.
pub fn solve(sigma: &SymmetricMatrix, config: &SolverConfig) -> Result<SolverResult> {
    let (l0, s0) = initial_point(sigma);
    solve_from(sigma, config, l0, s0)
}

/// Runs the accelerated iteration from a caller-supplied starting point.
///
/// Used for warm starts along a penalty path; `solve` is the canonical entry.
pub fn solve_from(
    sigma: &SymmetricMatrix,
    config: &SolverConfig,
    init_low_rank: SymmetricMatrix,
    init_sparse: SymmetricMatrix,
) -> Result<SolverResult> {
    config.validate()?;
    check_dims(&[sigma.dim(), init_low_rank.dim(), init_sparse.dim()])?;
    if !sigma.is_finite() {
        return Err(LorecError::NumericFailure("input matrix has non-finite entries".into()));
    }
    let inv_step = 1.0 / config.step_l;
    let low_rank_tau = config.lambda * inv_step;
    let sparse_tau = config.rho * inv_step;

    let mut prev_l = init_low_rank;
    let mut prev_s = init_sparse;
    let mut y = prev_l.clone();
    let mut z = prev_s.clone();
    let mut alpha = 1.0;

    let mut objective_trace = Vec::new();
    let mut momentum_trace = Vec::new();
    let mut converged = false;

    for t in 1..=config.max_iter {
        let grad = &(&y + &z) - sigma;
        let step = &grad * inv_step;
        let shrunk = shrink_spectrum(&(&y - &step), low_rank_tau)?;
        let l = shrunk.matrix;
        let s = soft_threshold_masked(&(&z - &step), sparse_tau, config.penalize_diagonal)?;
        if !l.is_finite() || !s.is_finite() {
            return Err(LorecError::NumericFailure(format!(
                "non-finite iterate at iteration {t}"
            )));
        }

        objective_trace.push(objective_with_nuclear(
            &l,
            &s,
            sigma,
            config.lambda,
            config.rho,
            config.penalize_diagonal,
            shrunk.nuclear_norm,
        ));
        momentum_trace.push(alpha);

        let dl = &l - &prev_l;
        let ds = &s - &prev_s;
        let change = dl.frobenius_norm() / (1.0 + prev_l.frobenius_norm())
            + ds.frobenius_norm() / (1.0 + prev_s.frobenius_norm());

        let alpha_next = next_momentum(alpha);
        let mix = (alpha - 1.0) / alpha_next;
        y = &l + &(&dl * mix);
        z = &s + &(&ds * mix);
        alpha = alpha_next;
        prev_l = l;
        prev_s = s;

        if change <= config.epsilon {
            converged = true;
            break;
        }
    }

    Ok(SolverResult {
        iterations: objective_trace.len(),
        estimate: Decomposition::new(prev_l, prev_s)?,
        objective_trace,
        converged,
        momentum_trace,
        lambda: config.lambda,
        rho: config.rho,
        penalize_diagonal: config.penalize_diagonal,
    })
}

/// Which first-order optimality condition failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum KktCondition {
    /// `‖R‖₂ ≤ λ`
    SpectralBound,
    /// `UᵀRV = λI` on the range of `L̂`
    LowRankAlignment,
    /// `|R_ij| ≤ ρ` (zero on an unpenalized diagonal)
    MaxBound,
    /// `R_ij = ρ·sign(Ŝ_ij)` on the support of `Ŝ`
    SparseAlignment,
}

#[derive(Debug, Clone, Serialize)]
pub struct KktViolation {
    pub condition: KktCondition,
    /// Observed value of the tested quantity.
    pub observed: f64,
    /// Allowed bound for that quantity.
    pub allowed: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KktReport {
    pub spectral_norm_residual: f64,
    pub low_rank_alignment_error: f64,
    pub max_residual: f64,
    pub sparse_alignment_error: f64,
    pub violations: Vec<KktViolation>,
}

impl KktReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violates(&self, condition: KktCondition) -> bool {
        self.violations.iter().any(|v| v.condition == condition)
    }
}

/// Checks first-order optimality of a solver result with residual `R = Σ − L̂ − Ŝ`.
pub fn kkt_check(
    result: &SolverResult,
    sigma: &SymmetricMatrix,
    lambda: f64,
    rho: f64,
    tol: f64,
) -> Result<KktReport> {
    let est = &result.estimate;
    check_dims(&[sigma.dim(), est.dim()])?;
    let residual = &(sigma - est.low_rank()) - est.sparse();
    let r = residual.as_matrix();
    let p = sigma.dim();
    let mut violations = Vec::new();

    let spectral = residual.operator_norm();
    if spectral > lambda * (1.0 + tol) {
        violations.push(KktViolation {
            condition: KktCondition::SpectralBound,
            observed: spectral,
            allowed: lambda * (1.0 + tol),
        });
    }

    // For symmetric L̂ = Σ d_k v_k v_kᵀ the singular pairs are (sign(d_k) v_k, v_k).
    let spec = spectral_factorize(est.low_rank())?;
    let scale = spec.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let active: Vec<usize> = (0..p)
        .filter(|&k| spec.eigenvalues[k].abs() > 1e-10 * scale.max(1.0))
        .collect();
    let mut alignment = 0.0_f64;
    if !active.is_empty() {
        let v = spec.eigenvectors.select_columns(active.iter());
        let projected = v.transpose() * r * &v;
        for (a, &ka) in active.iter().enumerate() {
            let sign = spec.eigenvalues[ka].signum();
            for b in 0..active.len() {
                let target = if a == b { lambda } else { 0.0 };
                alignment = alignment.max((sign * projected[(a, b)] - target).abs());
            }
        }
    }
    if alignment > tol * lambda {
        violations.push(KktViolation {
            condition: KktCondition::LowRankAlignment,
            observed: alignment,
            allowed: tol * lambda,
        });
    }

    let mut max_excess = 0.0_f64;
    let mut max_residual = 0.0_f64;
    let mut sparse_alignment = 0.0_f64;
    for j in 0..p {
        for i in 0..p {
            let rij = r[(i, j)];
            let sij = est.sparse()[(i, j)];
            let free = i == j && !result.penalize_diagonal;
            max_residual = max_residual.max(rij.abs());
            if free {
                // unpenalized entries need a zero residual
                sparse_alignment = sparse_alignment.max(rij.abs());
            } else {
                max_excess = max_excess.max(rij.abs() - rho);
                if sij != 0.0 {
                    sparse_alignment = sparse_alignment.max((rij - rho * sij.signum()).abs());
                }
            }
        }
    }
    if max_excess > tol * rho {
        violations.push(KktViolation {
            condition: KktCondition::MaxBound,
            observed: max_excess + rho,
            allowed: rho * (1.0 + tol),
        });
    }
    if sparse_alignment > tol * rho {
        violations.push(KktViolation {
            condition: KktCondition::SparseAlignment,
            observed: sparse_alignment,
            allowed: tol * rho,
        });
    }

    Ok(KktReport {
        spectral_norm_residual: spectral,
        low_rank_alignment_error: alignment,
        max_residual,
        sparse_alignment_error: sparse_alignment,
        violations,
    })
}

/// Worst-case accuracy after `t` iterations:
/// `8(|L₀ − L̂|_F² + |S₀ − Ŝ|_F²) / (t + 1)²`.
pub fn complexity_bound(t: usize, init: &Decomposition, optimum: &Decomposition) -> Result<f64> {
    if t < 1 {
        return Err(LorecError::invalid("iteration count must be at least 1"));
    }
    check_dims(&[init.dim(), optimum.dim()])?;
    let dl = (init.low_rank() - optimum.low_rank()).frobenius_norm();
    let ds = (init.sparse() - optimum.sparse()).frobenius_norm();
    let denom = (t as f64 + 1.0).powi(2);
    Ok(8.0 * (dl * dl + ds * ds) / denom)
}

/// Nuclear norm and ℓ1 norm of a decomposition, for callers that need the
/// penalty terms separately.
pub fn penalty_terms(decomposition: &Decomposition, penalize_diagonal: bool) -> (f64, f64) {
    (
        decomposition.low_rank().nuclear_norm(),
        l1_penalty(decomposition.sparse(), penalize_diagonal),
    )
}
