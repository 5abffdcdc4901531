//! Minimum-variance portfolio weights and the rolling annual backtest.
//!
//! A backtest year `y` holds weights built from the `window_months` months
//! ending December `y−1`. Estimator parameters for year `y` are the ones
//! whose own portfolios had the smallest pooled realized variance over the
//! preceding `tuning_lookback_years` years.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{LorecError, Result};
use crate::estimators::{estimate, EstimatorSpec};
use crate::matrix::{invert_symmetric, SymmetricMatrix};
use crate::metrics::MeanSe;
use crate::solver::SolverOptions;

pub const DEFAULT_WINDOW_MONTHS: usize = 120;
pub const DEFAULT_TUNING_LOOKBACK_YEARS: usize = 5;
/// Relative floor on `A₁A₃ − A₂²` below which a return target is rejected.
pub const DEGENERATE_CUTOFF: f64 = 1e-12;

/// Calendar month, written `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(LorecError::invalid(format!("month {month} out of range")));
        }
        Ok(YearMonth { year, month })
    }

    pub fn next(self) -> Self {
        if self.month == 12 {
            YearMonth { year: self.year + 1, month: 1 }
        } else {
            YearMonth { year: self.year, month: self.month + 1 }
        }
    }
}

impl FromStr for YearMonth {
    type Err = LorecError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || LorecError::invalid(format!("date {s:?} is not YYYY-MM"));
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        if y.len() != 4 || m.len() != 2 {
            return Err(bad());
        }
        let year = y.parse().map_err(|_| bad())?;
        let month = m.parse().map_err(|_| bad())?;
        YearMonth::new(year, month).map_err(|_| bad())
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl Serialize for YearMonth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Dated monthly returns, one row per month and one column per asset.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    dates: Vec<YearMonth>,
    tickers: Vec<String>,
    returns: DMatrix<f64>,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "NaN" | "nan" | "NAN")
}

impl ReturnsPanel {
    pub fn new(dates: Vec<YearMonth>, tickers: Vec<String>, returns: DMatrix<f64>) -> Result<Self> {
        if returns.nrows() != dates.len() || returns.ncols() != tickers.len() {
            return Err(LorecError::invalid(format!(
                "returns are {}x{} but there are {} dates and {} tickers",
                returns.nrows(),
                returns.ncols(),
                dates.len(),
                tickers.len()
            )));
        }
        if tickers.is_empty() || dates.is_empty() {
            return Err(LorecError::invalid("returns panel is empty"));
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(LorecError::invalid(format!(
                "dates must be strictly increasing: {} then {}",
                w[0], w[1]
            )));
        }
        if !returns.iter().all(|v| v.is_finite()) {
            return Err(LorecError::invalid("returns contain non-finite values"));
        }
        Ok(ReturnsPanel { dates, tickers, returns })
    }

    /// Parses `date,TICKER1,...` CSV. Assets with any missing month are
    /// dropped; `annualize` multiplies every return by 12.
    pub fn parse_csv(reader: impl Read, annualize: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 2 {
            return Err(LorecError::invalid("returns CSV needs a date column and at least one asset"));
        }
        let all_tickers: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut dates = Vec::new();
        let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); all_tickers.len()];
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            dates.push(record[0].parse::<YearMonth>()?);
            for (j, cell) in record.iter().skip(1).enumerate() {
                let value = if is_missing(cell) {
                    None
                } else {
                    Some(cell.parse::<f64>().map_err(|_| {
                        LorecError::invalid(format!("row {}: cannot parse {cell:?}", line + 2))
                    })?)
                };
                columns[j].push(value);
            }
        }
        let scale = if annualize { 12.0 } else { 1.0 };
        let kept: Vec<usize> = (0..all_tickers.len())
            .filter(|&j| columns[j].iter().all(Option::is_some))
            .collect();
        if kept.is_empty() {
            return Err(LorecError::invalid("every asset has missing returns"));
        }
        let returns = DMatrix::from_fn(dates.len(), kept.len(), |i, k| {
            columns[kept[k]][i].expect("complete column") * scale
        });
        let tickers = kept.iter().map(|&j| all_tickers[j].clone()).collect();
        ReturnsPanel::new(dates, tickers, returns)
    }

    pub fn read_csv(path: impl AsRef<Path>, annualize: bool) -> Result<Self> {
        Self::parse_csv(std::fs::File::open(path)?, annualize)
    }

    pub fn dates(&self) -> &[YearMonth] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }

    pub fn months(&self) -> usize {
        self.dates.len()
    }

    pub fn assets(&self) -> usize {
        self.tickers.len()
    }

    /// Rows `start..start + len` as an observation matrix.
    pub fn window(&self, start: usize, len: usize) -> Result<DMatrix<f64>> {
        if len == 0 || start + len > self.months() {
            return Err(LorecError::invalid(format!(
                "window {start}..{} outside a {}-month panel",
                start + len,
                self.months()
            )));
        }
        Ok(self.returns.rows(start, len).into_owned())
    }
}

/// Per-asset mean of `window` rows of returns.
pub fn expected_return_vector(window: &DMatrix<f64>) -> Result<DVector<f64>> {
    if window.nrows() == 0 {
        return Err(LorecError::invalid("expected returns need a nonempty window"));
    }
    Ok(window.row_mean().transpose())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortfolioWeights {
    pub weights: Vec<f64>,
    pub target_q: Option<f64>,
}

impl PortfolioWeights {
    pub fn as_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.weights)
    }

    pub fn budget(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn expected_return(&self, mu: &DVector<f64>) -> f64 {
        self.as_vector().dot(mu)
    }

    pub fn variance(&self, sigma: &SymmetricMatrix) -> f64 {
        let w = self.as_vector();
        w.dot(&(sigma.as_matrix() * &w))
    }
}

/// Minimum-variance weights with budget `wᵀ1 = 1` and, when `q` is given,
/// target return `wᵀμ = q`.
pub fn markowitz_weights(
    sigma: &SymmetricMatrix,
    mu: &DVector<f64>,
    q: Option<f64>,
) -> Result<PortfolioWeights> {
    let p = sigma.dim();
    if mu.len() != p {
        return Err(LorecError::invalid(format!(
            "expected-return vector has length {} for a {p}x{p} covariance",
            mu.len()
        )));
    }
    let inv = invert_symmetric(sigma)?;
    let inv_one = inv.as_matrix().column_sum();
    let a1 = inv_one.sum();
    let w = match q {
        None => {
            if a1 == 0.0 {
                return Err(LorecError::DegenerateConstraint { determinant: 0.0 });
            }
            inv_one / a1
        }
        Some(q) => {
            let inv_mu = inv.as_matrix() * mu;
            let a2 = inv_one.dot(mu);
            let a3 = mu.dot(&inv_mu);
            let det = a1 * a3 - a2 * a2;
            let scale = (a1 * a3).abs().max(a2 * a2);
            if !(det.abs() > DEGENERATE_CUTOFF * scale) {
                return Err(LorecError::DegenerateConstraint { determinant: det });
            }
            inv_one * ((a3 - q * a2) / det) + inv_mu * ((q * a1 - a2) / det)
        }
    };
    if !w.iter().all(|v| v.is_finite()) {
        return Err(LorecError::NumericFailure("non-finite portfolio weights".into()));
    }
    Ok(PortfolioWeights {
        weights: w.iter().copied().collect(),
        target_q: q,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BacktestConfig {
    pub q: Option<f64>,
    pub window_months: usize,
    pub tuning_lookback_years: usize,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            q: None,
            window_months: DEFAULT_WINDOW_MONTHS,
            tuning_lookback_years: DEFAULT_TUNING_LOOKBACK_YEARS,
        }
    }
}

impl BacktestConfig {
    /// Minimum panel length for one test year when the panel starts in January.
    pub fn required_months(&self) -> usize {
        self.window_months + 12 * self.tuning_lookback_years + 12
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YearOutcome<C> {
    pub year: i32,
    pub chosen: C,
    pub weights: Vec<f64>,
    pub monthly_returns: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestRecord<C> {
    pub config: BacktestConfig,
    pub years: Vec<YearOutcome<C>>,
    /// Mean of all realized monthly returns, with standard error.
    pub mean_return: MeanSe,
    /// Mean of the per-year realized variances, with standard error.
    pub realized_variance: MeanSe,
}

struct HeldYear {
    weights: Vec<f64>,
    returns: Vec<f64>,
}

fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

/// Rolling backtest with an arbitrary covariance rule. `estimator` maps a
/// candidate and a window of returns to a covariance estimate. Variance ties
/// in tuning go to the later candidate. A candidate whose covariance is
/// singular in some year is ineligible whenever that year matters.
pub fn rolling_backtest_with<C, F>(
    panel: &ReturnsPanel,
    candidates: &[C],
    config: &BacktestConfig,
    estimator: F,
) -> Result<BacktestRecord<C>>
where
    C: Clone,
    F: Fn(&C, &DMatrix<f64>) -> Result<SymmetricMatrix>,
{
    if candidates.is_empty() {
        return Err(LorecError::invalid("backtest needs at least one candidate"));
    }
    if config.window_months < 2 {
        return Err(LorecError::invalid("estimation window must span at least 2 months"));
    }
    if config.tuning_lookback_years == 0 && candidates.len() > 1 {
        return Err(LorecError::invalid("tuning several candidates needs a positive lookback"));
    }
    if let Some(w) = panel.dates().windows(2).find(|w| w[0].next() != w[1]) {
        return Err(LorecError::invalid(format!(
            "backtest needs consecutive months; {} is followed by {}",
            w[0], w[1]
        )));
    }

    // every calendar year with a full window before it and all 12 months inside
    let n = panel.months();
    let year_starts: Vec<usize> = (config.window_months..n.saturating_sub(11))
        .filter(|&i| panel.dates()[i].month == 1)
        .collect();
    let lookback = config.tuning_lookback_years;
    if year_starts.len() <= lookback {
        return Err(LorecError::invalid(format!(
            "backtest needs at least {} months aligned to calendar years \
             ({}-month window, {lookback} tuning years, one test year); panel has {n} months from {}",
            config.required_months(),
            config.window_months,
            panel.dates()[0]
        )));
    }

    let mut held: Vec<Vec<Option<HeldYear>>> = Vec::with_capacity(year_starts.len());
    for &start in &year_starts {
        let window = panel.window(start - config.window_months, config.window_months)?;
        let mu = expected_return_vector(&window)?;
        let realized = panel.window(start, 12)?;
        let mut row = Vec::with_capacity(candidates.len());
        for c in candidates {
            let sigma = estimator(c, &window)?;
            match markowitz_weights(&sigma, &mu, config.q) {
                Ok(w) => {
                    let returns = (&realized * w.as_vector()).iter().copied().collect();
                    row.push(Some(HeldYear { weights: w.weights, returns }));
                }
                Err(LorecError::Singular { .. }) | Err(LorecError::DegenerateConstraint { .. }) => {
                    row.push(None)
                }
                Err(e) => return Err(e),
            }
        }
        held.push(row);
    }

    let mut years = Vec::new();
    for t in lookback..year_starts.len() {
        let mut best: Option<(usize, f64)> = None;
        for c in 0..candidates.len() {
            if held[t][c].is_none() {
                continue;
            }
            let pooled: Option<Vec<f64>> = (t - lookback..t)
                .map(|u| held[u][c].as_ref().map(|h| h.returns.clone()))
                .collect::<Option<Vec<_>>>()
                .map(|v| v.concat());
            let score = match pooled {
                Some(r) if r.len() >= 2 => sample_variance(&r),
                Some(_) => 0.0,
                None => continue,
            };
            if best.is_none_or(|(_, b)| score <= b) {
                best = Some((c, score));
            }
        }
        let (c, _) = best.ok_or_else(|| {
            LorecError::Precondition(format!(
                "no candidate yields a nonsingular covariance for test year {} and its tuning years",
                panel.dates()[year_starts[t]].year
            ))
        })?;
        let h = held[t][c].as_ref().expect("eligible candidate");
        years.push(YearOutcome {
            year: panel.dates()[year_starts[t]].year,
            chosen: candidates[c].clone(),
            weights: h.weights.clone(),
            monthly_returns: h.returns.clone(),
            mean: h.returns.iter().sum::<f64>() / 12.0,
            variance: sample_variance(&h.returns),
        });
    }

    let all: Vec<f64> = years.iter().flat_map(|y| y.monthly_returns.iter().copied()).collect();
    let variances: Vec<f64> = years.iter().map(|y| y.variance).collect();
    Ok(BacktestRecord {
        config: *config,
        mean_return: MeanSe::of(&all).expect("at least one test year"),
        realized_variance: MeanSe::of(&variances).expect("at least one test year"),
        years,
    })
}

/// Rolling backtest over estimator candidates. Candidates are put in
/// ascending penalty order first, so variance ties pick the larger penalty.
pub fn rolling_backtest(
    panel: &ReturnsPanel,
    candidates: &[EstimatorSpec],
    config: &BacktestConfig,
    options: &SolverOptions,
) -> Result<BacktestRecord<EstimatorSpec>> {
    for c in candidates {
        c.validate()?;
    }
    let mut ordered = candidates.to_vec();
    ordered.sort_by(|a, b| {
        a.kind().cmp(&b.kind()).then_with(|| {
            a.penalty_key()
                .iter()
                .zip(b.penalty_key().iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    ordered.dedup();
    rolling_backtest_with(panel, &ordered, config, |spec, window| {
        Ok(estimate(spec, window, options)?.covariance)
    })
}

impl BacktestRecord<EstimatorSpec> {
    /// One row per test year: chosen parameters, weights-free summary and
    /// the twelve monthly returns.
    pub fn write_per_year_csv(&self, mut out: impl Write) -> Result<()> {
        let months: Vec<String> = (1..=12).map(|m| format!("m{m:02}")).collect();
        writeln!(out, "year,estimator,params,mean,variance,{}", months.join(","))?;
        for y in &self.years {
            let params: Vec<String> = y
                .chosen
                .params()
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect();
            let returns: Vec<String> = y.monthly_returns.iter().map(f64::to_string).collect();
            writeln!(
                out,
                "{},{},{},{},{},{}",
                y.year,
                y.chosen.kind(),
                params.join(";"),
                y.mean,
                y.variance,
                returns.join(",")
            )?;
        }
        Ok(())
    }
}
