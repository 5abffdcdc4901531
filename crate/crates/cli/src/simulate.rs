//! Monte-Carlo protocol: generate a model, sample, tune each estimator by
//! cross-validation, score against the truth, aggregate over replications.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use lorec::estimators::{estimate_from_covariance, Estimate, EstimatorKind, EstimatorSpec};
use lorec::matrix::sample_covariance;
use lorec::metrics::{aggregate, score, write_summary_csv, RecoveryReport, ReportSummary, REPORT_CSV_HEADER};
use lorec::model_gen::{sample_gaussian, GroundTruthModel, ModelFamily, Seed};
use lorec::solver::SolverOptions;
use lorec::tuning::{candidates_for, kfold_cv, DEFAULT_FOLDS, DEFAULT_GRID_FLOOR, DEFAULT_GRID_SIZE};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const REPLICATIONS_FILE: &str = "replications.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Clone, Serialize)]
pub struct SimulateConfig {
    pub family: ModelFamily,
    pub p: usize,
    pub n: usize,
    pub reps: usize,
    pub estimators: Vec<EstimatorKind>,
    pub seed: u64,
    pub folds: usize,
    pub grid_size: usize,
    /// Grids run from `grid_floor` times their top up to the top.
    pub grid_floor: f64,
    /// Input threshold for the thresholded-input estimator; defaults to `√(log p / n)`.
    pub input_threshold: Option<f64>,
    pub solver: SolverOptions,
}

impl SimulateConfig {
    pub fn new(family: ModelFamily, p: usize, seed: u64) -> Self {
        SimulateConfig {
            family,
            p,
            n: 100,
            reps: 100,
            estimators: vec![
                EstimatorKind::Lorec,
                EstimatorKind::Sample,
                EstimatorKind::HardThreshold,
                EstimatorKind::ShrinkToIdentity,
            ],
            seed,
            folds: DEFAULT_FOLDS,
            grid_size: DEFAULT_GRID_SIZE,
            grid_floor: DEFAULT_GRID_FLOOR,
            input_threshold: None,
            solver: SolverOptions::default(),
        }
    }

    pub fn input_threshold(&self) -> f64 {
        self.input_threshold
            .unwrap_or_else(|| ((self.p as f64).ln() / self.n as f64).sqrt())
    }

    fn validate(&self) -> CliResult<()> {
        if self.reps == 0 {
            return Err(CliError::Usage("reps must be positive".into()));
        }
        if self.estimators.is_empty() {
            return Err(CliError::Usage("no estimators requested".into()));
        }
        if self.n < 2 * self.folds {
            return Err(CliError::Usage(format!(
                "n = {} is too small for {}-fold cross-validation",
                self.n, self.folds
            )));
        }
        self.solver.validate()?;
        Ok(())
    }
}

/// One tuned estimator on one replication.
#[derive(Debug, Clone)]
pub struct Fit {
    pub kind: EstimatorKind,
    pub chosen: EstimatorSpec,
    pub estimate: Estimate,
    pub report: RecoveryReport,
}

#[derive(Debug, Clone)]
pub struct Replication {
    pub index: usize,
    pub truth: GroundTruthModel,
    pub fits: Vec<Fit>,
}

/// Runs replication `index`; its model, sample and folds come from child
/// seeds of the run seed, so replications are independent of scheduling.
pub fn run_replication(config: &SimulateConfig, index: usize) -> CliResult<Replication> {
    let rep_seed = Seed(config.seed).child(index as u64);
    let truth = config.family.generate(config.p, rep_seed.child(0))?;
    let data = sample_gaussian(&truth, config.n, rep_seed.child(1))?;
    let sigma_n = sample_covariance(&data)?;
    let tau = config.input_threshold();

    let mut fits = Vec::with_capacity(config.estimators.len());
    for &kind in &config.estimators {
        let candidates = candidates_for(kind, &sigma_n, config.grid_size, config.grid_floor, Some(tau))?;
        let chosen = if candidates.len() == 1 {
            candidates[0]
        } else {
            kfold_cv(&data, &candidates, config.folds, rep_seed.child(2), &config.solver)?.best
        };
        let estimate = estimate_from_covariance(&chosen, &sigma_n, &config.solver)?;
        let report = score(&estimate.covariance, estimate.decomposition.as_ref(), &truth)?;
        fits.push(Fit {
            kind,
            chosen,
            estimate,
            report,
        });
    }
    Ok(Replication { index, truth, fits })
}

/// Runs every replication on a pool of `jobs` workers; results come back in
/// replication order.
pub fn run_simulation(config: &SimulateConfig, jobs: usize) -> CliResult<Vec<Replication>> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    pool.install(|| {
        (0..config.reps)
            .into_par_iter()
            .map(|r| run_replication(config, r))
            .collect()
    })
}

/// Per-estimator summaries in the configured estimator order.
pub fn summarize(config: &SimulateConfig, reps: &[Replication]) -> CliResult<Vec<(EstimatorKind, ReportSummary)>> {
    config
        .estimators
        .iter()
        .enumerate()
        .map(|(e, &kind)| {
            let reports: Vec<RecoveryReport> = reps.iter().map(|r| r.fits[e].report.clone()).collect();
            Ok((kind, aggregate(&reports)?))
        })
        .collect()
}

fn params_cell(spec: &EstimatorSpec) -> String {
    spec.params()
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

/// Writes `replications.csv` and `summary.csv` into `out_dir`.
pub fn write_outputs(config: &SimulateConfig, reps: &[Replication], out_dir: &Path) -> CliResult<()> {
    let family = config.family.name();
    let mut out = BufWriter::new(fs::File::create(out_dir.join(REPLICATIONS_FILE))?);
    writeln!(out, "family,estimator,p,n,rep,params,{REPORT_CSV_HEADER}")?;
    for rep in reps {
        for fit in &rep.fits {
            writeln!(
                out,
                "{family},{},{},{},{},{},{}",
                fit.kind,
                config.p,
                config.n,
                rep.index,
                params_cell(&fit.chosen),
                fit.report.csv_row()
            )?;
        }
    }
    out.flush()?;

    let rows: Vec<(String, String, usize, ReportSummary)> = summarize(config, reps)?
        .into_iter()
        .map(|(kind, s)| (family.to_string(), kind.to_string(), config.p, s))
        .collect();
    let mut out = BufWriter::new(fs::File::create(out_dir.join(SUMMARY_FILE))?);
    write_summary_csv(&mut out, &rows)?;
    out.flush()?;
    Ok(())
}
