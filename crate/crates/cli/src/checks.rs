//! Self-check suites run on random instances: optimality conditions, the
//! accelerated convergence bound, and brute-force proximal oracles.

use lorec::matrix::{soft_threshold, soft_threshold_entrywise, soft_threshold_masked, svd_soft_threshold};
use lorec::solver::{
    complexity_bound, initial_point, kkt_check, solve, Decomposition, SolverConfig, SolverOptions,
};
use lorec::SymmetricMatrix;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::CliResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Kkt,
    Bound,
    Prox,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Kkt => "kkt",
            Suite::Bound => "bound",
            Suite::Prox => "prox",
        }
    }

    pub fn default_instances(self) -> usize {
        match self {
            Suite::Kkt => 20,
            Suite::Bound => 50,
            Suite::Prox => 20,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub suite: Suite,
    pub instances: usize,
    pub seed: u64,
    /// Largest observed error relative to its allowance; below 1 means pass.
    pub worst_ratio: f64,
    pub failures: Vec<String>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn record(&mut self, ratio: f64, describe: impl FnOnce() -> String) {
        self.worst_ratio = self.worst_ratio.max(ratio);
        if !(ratio <= 1.0) {
            self.failures.push(describe());
        }
    }
}

pub fn run_suite(suite: Suite, instances: usize, seed: u64) -> CliResult<CheckReport> {
    match suite {
        Suite::Kkt => kkt_suite(instances, seed),
        Suite::Bound => bound_suite(instances, seed),
        Suite::Prox => prox_suite(instances, seed),
    }
}

/// Random PSD matrix `AAᵀ + D` with a random inner dimension.
pub fn random_psd(rng: &mut ChaCha8Rng, p: usize) -> SymmetricMatrix {
    let k = rng.random_range(1..=p);
    let a = DMatrix::from_fn(p, k, |_, _| rng.random_range(-1.0..1.0));
    let d = DVector::from_fn(p, |_, _| rng.random_range(0.0..0.5));
    SymmetricMatrix::symmetrize(&a * a.transpose() + DMatrix::from_diagonal(&d))
        .expect("square by construction")
}

/// Penalties drawn relative to the input's spectral and entrywise scale.
fn random_penalties(rng: &mut ChaCha8Rng, sigma: &SymmetricMatrix) -> (f64, f64) {
    let lambda = rng.random_range(0.01..0.5) * sigma.operator_norm();
    let rho = rng.random_range(0.01..0.5) * sigma.max_abs();
    (lambda, rho)
}

pub const KKT_EPSILON: f64 = 1e-8;
pub const KKT_TOLERANCE: f64 = 1e-3;

/// Tight solves on `p = 10` inputs must satisfy every optimality condition.
pub fn kkt_suite(instances: usize, seed: u64) -> CliResult<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = empty(Suite::Kkt, instances, seed);
    let options = SolverOptions {
        epsilon: KKT_EPSILON,
        max_iter: 200_000,
        ..SolverOptions::default()
    };
    for i in 0..instances {
        let sigma = random_psd(&mut rng, 10);
        let (lambda, rho) = random_penalties(&mut rng, &sigma);
        let result = solve(&sigma, &SolverConfig::with_options(lambda, rho, &options)?)?;
        let kkt = kkt_check(&result, &sigma, lambda, rho, KKT_TOLERANCE)?;
        // each condition's error over its allowance, so a ratio of at most 1 means it holds
        let ratio = if result.converged {
            [
                (kkt.spectral_norm_residual - lambda) / (KKT_TOLERANCE * lambda),
                kkt.low_rank_alignment_error / (KKT_TOLERANCE * lambda),
                (kkt.max_residual - rho) / (KKT_TOLERANCE * rho),
                kkt.sparse_alignment_error / (KKT_TOLERANCE * rho),
            ]
            .into_iter()
            .fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        report.record(ratio, || {
            format!(
                "instance {i}: lambda={lambda} rho={rho} converged={} violations={:?}",
                result.converged, kkt.violations
            )
        });
    }
    Ok(report)
}

pub const BOUND_REFERENCE_ITERATIONS: usize = 10_000;
pub const BOUND_SLACK: f64 = 1e-10;

/// Every iterate of a long run stays within `8(|L₀−L̂|²+|S₀−Ŝ|²)/(t+1)²` of
/// the run's final objective. Dimensions cycle through 10, 20 and 40.
pub fn bound_suite(instances: usize, seed: u64) -> CliResult<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = empty(Suite::Bound, instances, seed);
    let options = SolverOptions {
        epsilon: f64::MIN_POSITIVE,
        max_iter: BOUND_REFERENCE_ITERATIONS,
        ..SolverOptions::default()
    };
    for i in 0..instances {
        let p = [10, 20, 40][i % 3];
        let sigma = random_psd(&mut rng, p);
        let (lambda, rho) = random_penalties(&mut rng, &sigma);
        let result = solve(&sigma, &SolverConfig::with_options(lambda, rho, &options)?)?;
        let f_star = result.final_objective();
        let (l0, s0) = initial_point(&sigma);
        let init = Decomposition::new(l0, s0)?;
        let mut worst: (f64, usize) = (0.0, 0);
        for (k, f) in result.objective_trace.iter().enumerate() {
            let t = k + 1;
            let allowed = complexity_bound(t, &init, &result.estimate)? + BOUND_SLACK;
            let ratio = (f - f_star) / allowed;
            if ratio > worst.0 {
                worst = (ratio, t);
            }
        }
        report.record(worst.0, || {
            format!("instance {i} (p={p}): gap exceeds the bound by factor {} at t={}", worst.0, worst.1)
        });
    }
    Ok(report)
}

pub const PROX_TOLERANCE: f64 = 1e-4;
pub const SCALAR_PROX_TOLERANCE: f64 = 1e-6;

/// Minimizer of a convex scalar function by nested grids around `start`.
pub fn scalar_grid_minimize(f: impl Fn(f64) -> f64, start: f64, width: f64) -> f64 {
    let mut best = start;
    let mut best_val = f(best);
    let mut h = width / 64.0;
    while h > 1e-13 {
        let centre = best;
        for k in -64..=64 {
            let x = centre + k as f64 * h;
            let v = f(x);
            if v < best_val {
                best = x;
                best_val = v;
            }
        }
        h /= 16.0;
    }
    best
}

/// Brute-force minimizer of `½|X − M|_F² + τ‖X‖_*` over symmetric 2×2 `X`,
/// written `X = R(θ) diag(d₁, d₂) R(θ)ᵀ`. For fixed θ the two eigenvalues
/// decouple into scalar searches; θ is scanned on a fine grid then refined.
/// Returns `(x₁₁, x₁₂, x₂₂)`.
pub fn spectral_prox_search(m: [f64; 3], tau: f64) -> [f64; 3] {
    let inner = |theta: f64| {
        let (c, s) = (theta.cos(), theta.sin());
        let a = c * c * m[0] + 2.0 * c * s * m[1] + s * s * m[2];
        let b = (c * c - s * s) * m[1] + c * s * (m[2] - m[0]);
        let e = s * s * m[0] - 2.0 * c * s * m[1] + c * c * m[2];
        let d1 = scalar_grid_minimize(|d| 0.5 * (d - a).powi(2) + tau * d.abs(), a, 8.0);
        let d2 = scalar_grid_minimize(|d| 0.5 * (d - e).powi(2) + tau * d.abs(), e, 8.0);
        let value = 0.5 * (d1 - a).powi(2) + 0.5 * (d2 - e).powi(2) + b * b + tau * (d1.abs() + d2.abs());
        (value, [c * c * d1 + s * s * d2, c * s * (d1 - d2), s * s * d1 + c * c * d2])
    };
    let pi = std::f64::consts::PI;
    let steps = 2000;
    let mut theta = (0..steps)
        .map(|k| k as f64 * pi / steps as f64)
        .min_by(|a, b| inner(*a).0.total_cmp(&inner(*b).0))
        .expect("nonempty scan");
    let mut h = pi / steps as f64;
    while h > 1e-10 {
        let centre = theta;
        let mut best = inner(theta).0;
        for k in -8..=8 {
            let t = centre + k as f64 * h / 4.0;
            let v = inner(t).0;
            if v < best {
                best = v;
                theta = t;
            }
        }
        h /= 4.0;
    }
    inner(theta).1
}

fn sym2(x: [f64; 3]) -> SymmetricMatrix {
    SymmetricMatrix::from_upper_fn(2, |i, j| match (i, j) {
        (0, 0) => x[0],
        (1, 1) => x[2],
        _ => x[1],
    })
}

fn max_gap(m: &SymmetricMatrix, x: [f64; 3]) -> f64 {
    [m[(0, 0)] - x[0], m[(0, 1)] - x[1], m[(1, 1)] - x[2]]
        .iter()
        .fold(0.0_f64, |a, v| a.max(v.abs()))
}

/// Closed-form proximal steps against brute-force minimizers on random 2×2
/// symmetric inputs, plus the scalar soft-threshold.
pub fn prox_suite(instances: usize, seed: u64) -> CliResult<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = empty(Suite::Prox, instances, seed);
    for i in 0..instances {
        let m = [
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        ];
        let tau = rng.random_range(0.05..1.5);
        let input = sym2(m);

        let (closed, _) = svd_soft_threshold(&input, tau)?;
        let gap = max_gap(&closed, spectral_prox_search(m, tau));
        report.record(gap / PROX_TOLERANCE, || format!("instance {i}: spectral prox off by {gap}"));

        // the entrywise objective on a symmetric 2×2 splits into one scalar
        // problem per free entry; the off-diagonal counts twice in both terms
        let scalar = |z: f64, t: f64| scalar_grid_minimize(|x| 0.5 * (x - z).powi(2) + t * x.abs(), z, 8.0);
        let entry = [scalar(m[0], tau), scalar(m[1], tau), scalar(m[2], tau)];
        let gap = max_gap(&soft_threshold_entrywise(&input, tau)?, entry);
        report.record(gap / PROX_TOLERANCE, || format!("instance {i}: entrywise prox off by {gap}"));
        let off_only = [m[0], entry[1], m[2]];
        let gap = max_gap(&soft_threshold_masked(&input, tau, false)?, off_only);
        report.record(gap / PROX_TOLERANCE, || format!("instance {i}: off-diagonal prox off by {gap}"));

        for _ in 0..5 {
            let z = rng.random_range(-3.0..3.0);
            let t = rng.random_range(0.0..2.0);
            let gap = (soft_threshold(z, t) - scalar(z, t)).abs();
            report.record(gap / SCALAR_PROX_TOLERANCE, || {
                format!("instance {i}: scalar prox at z={z}, tau={t} off by {gap}")
            });
        }
    }
    Ok(report)
}

fn empty(suite: Suite, instances: usize, seed: u64) -> CheckReport {
    CheckReport {
        suite,
        instances,
        seed,
        worst_ratio: 0.0,
        failures: Vec::new(),
    }
}
