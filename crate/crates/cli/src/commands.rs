use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use lorec::estimators::{estimate_from_covariance, EstimatorKind, EstimatorSpec};
use lorec::matrix::{read_matrix_csv, read_symmetric_csv, sample_covariance, save_matrix_csv};
use lorec::model_gen::{sample_gaussian, Seed};
use lorec::portfolio::{rolling_backtest, BacktestConfig, ReturnsPanel};
use lorec::solver::SolverSummary;
use lorec::tuning::{candidates_for, kfold_cv};
use serde::Serialize;

use crate::args::{BacktestArgs, CheckArgs, DecomposeArgs, GenerateArgs, SimulateArgs};
use crate::checks::{run_suite, CheckReport};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::simulate::{run_simulation, write_outputs, SimulateConfig};

fn prepare_out_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn cmd_generate(args: &GenerateArgs) -> CliResult<()> {
    prepare_out_dir(&args.out_dir)?;
    let model = args.family.generate(args.p, Seed(args.seed).child(0))?;
    model.save(&args.out_dir)?;
    if let Some(n) = args.n {
        let data = sample_gaussian(&model, n, Seed(args.seed).child(1))?;
        save_matrix_csv(args.out_dir.join("data.csv"), &data)?;
    }
    RunManifest::new("generate", args, Some(args.seed))?.write(&args.out_dir)
}

#[derive(Debug, Serialize)]
struct CvChoice {
    best: EstimatorSpec,
    best_mean_loss: f64,
}

#[derive(Debug, Serialize)]
struct DecomposeRecord {
    estimator: EstimatorSpec,
    p: usize,
    rank: usize,
    support_size: usize,
    solver: SolverSummary,
    cv: Option<CvChoice>,
}

pub fn cmd_decompose(args: &DecomposeArgs) -> CliResult<()> {
    let options = args.solver.options();
    let (sigma_n, data) = if args.data {
        let data = read_matrix_csv(&args.input)?;
        (sample_covariance(&data)?, Some(data))
    } else {
        (read_symmetric_csv(&args.input)?, None)
    };
    let kind = if args.threshold_input.is_some() {
        EstimatorKind::LorecThresholdedInput
    } else {
        EstimatorKind::Lorec
    };
    prepare_out_dir(&args.out_dir)?;

    let (spec, cv) = match (args.cv, &data) {
        (true, Some(data)) => {
            let candidates = candidates_for(kind, &sigma_n, args.grid_size, args.grid_floor, args.threshold_input)?;
            let outcome = kfold_cv(data, &candidates, args.folds, Seed(args.seed), &options)?;
            let mut table = BufWriter::new(fs::File::create(args.out_dir.join("cv_table.csv"))?);
            outcome.write_table_csv(&mut table)?;
            table.flush()?;
            let choice = CvChoice {
                best: outcome.best,
                best_mean_loss: outcome.best_mean_loss,
            };
            (outcome.best, Some(choice))
        }
        (true, None) => return Err(CliError::Usage("--cv needs observations (--data)".into())),
        (false, _) => {
            let (lambda, rho) = match (args.lambda, args.rho) {
                (Some(l), Some(r)) => (l, r),
                _ => return Err(CliError::Usage("give --lambda and --rho, or --cv".into())),
            };
            let spec = match args.threshold_input {
                Some(tau) => EstimatorSpec::LorecThresholdedInput { tau, lambda, rho },
                None => EstimatorSpec::Lorec { lambda, rho },
            };
            (spec, None)
        }
    };

    let fit = estimate_from_covariance(&spec, &sigma_n, &options)?;
    let decomposition = fit.decomposition.as_ref().expect("low-rank plus sparse estimator");
    let solver = fit.solver.as_ref().expect("low-rank plus sparse estimator");
    save_matrix_csv(args.out_dir.join("L.csv"), decomposition.low_rank().as_matrix())?;
    save_matrix_csv(args.out_dir.join("S.csv"), decomposition.sparse().as_matrix())?;
    let record = DecomposeRecord {
        estimator: spec,
        p: sigma_n.dim(),
        rank: decomposition.rank(),
        support_size: decomposition.support().len(),
        solver: solver.summary(),
        cv,
    };
    write_json(&args.out_dir.join("result.json"), &record)?;
    RunManifest::new("decompose", args, args.cv.then_some(args.seed))?
        .with_input(&args.input)?
        .write(&args.out_dir)
}

pub fn simulate_config(args: &SimulateArgs) -> SimulateConfig {
    SimulateConfig {
        family: args.family,
        p: args.p,
        n: args.n,
        reps: args.reps,
        estimators: args.estimators.clone(),
        seed: args.seed,
        folds: args.folds,
        grid_size: args.grid_size,
        grid_floor: args.grid_floor,
        input_threshold: args.threshold_input,
        solver: args.solver.options(),
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let config = simulate_config(args);
    prepare_out_dir(&args.out_dir)?;
    let reps = run_simulation(&config, args.jobs)?;
    write_outputs(&config, &reps, &args.out_dir)?;
    // the worker count cannot change any output, so it stays out of the manifest
    RunManifest::new("simulate", &config, Some(args.seed))?.write(&args.out_dir)
}

pub fn cmd_backtest(args: &BacktestArgs) -> CliResult<()> {
    let panel = ReturnsPanel::read_csv(&args.returns, args.annualize)?;
    let config = BacktestConfig {
        q: args.q,
        window_months: args.window_months,
        tuning_lookback_years: args.lookback_years,
    };
    let options = args.solver.options();
    // grid scaled to the first estimation window only, so no later data leaks in
    let first = panel.window(0, args.window_months.min(panel.months()))?;
    let tau = match (args.estimator, args.threshold_input) {
        (EstimatorKind::LorecThresholdedInput, None) => {
            Some(((panel.assets() as f64).ln() / args.window_months as f64).sqrt())
        }
        (_, t) => t,
    };
    let candidates = candidates_for(
        args.estimator,
        &sample_covariance(&first)?,
        args.grid_size,
        args.grid_floor,
        tau,
    )?;
    let record = rolling_backtest(&panel, &candidates, &config, &options)?;

    prepare_out_dir(&args.out_dir)?;
    write_json(&args.out_dir.join("backtest.json"), &record)?;
    let mut out = BufWriter::new(fs::File::create(args.out_dir.join("per_year.csv"))?);
    record.write_per_year_csv(&mut out)?;
    out.flush()?;
    RunManifest::new("backtest", args, None)?
        .with_input(&args.returns)?
        .write(&args.out_dir)
}

pub fn cmd_check(args: &CheckArgs) -> CliResult<CheckReport> {
    let instances = args.instances.unwrap_or(args.suite.default_instances());
    let report = run_suite(args.suite, instances, args.seed)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(dir) = &args.out_dir {
        prepare_out_dir(dir)?;
        write_json(&dir.join("check.json"), &report)?;
        RunManifest::new("check", args, Some(args.seed))?.write(dir)?;
    }
    if report.passed() {
        Ok(report)
    } else {
        Err(CliError::CheckFailed {
            suite: args.suite.name().to_string(),
            failures: report.failures.len(),
        })
    }
}
