//! Loss and structure-recovery scoring against a known ground truth.

use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{LorecError, Result};
use crate::matrix::{invert_symmetric, SymmetricMatrix};
use crate::model_gen::GroundTruthModel;
use crate::solver::{Decomposition, SUPPORT_CUTOFF};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub spectral_loss: f64,
    pub frobenius_loss: f64,
    pub max_loss: f64,
    /// Rank of the low-rank part; absent for estimators without a decomposition.
    pub rank_estimated: Option<usize>,
    pub rank_correct: Option<bool>,
    /// Share of true sparse-support entries detected, in percent.
    pub pct_true_positive: Option<f64>,
    /// Share of true zeros of the sparse part estimated as zero, in percent.
    pub pct_true_negative: Option<f64>,
    /// `max_i |Λ_i(Σ̂) − Λ_i(Σ*)|`.
    pub eigen_distance: f64,
    pub inverse_spectral_loss: Option<f64>,
    pub inverse_frobenius_loss: Option<f64>,
}

fn check_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(LorecError::invalid(format!("dimension mismatch: {a} vs {b}")));
    }
    Ok(())
}

/// Scores an estimate against the model it was drawn from.
pub fn score(
    estimate: &SymmetricMatrix,
    decomposition: Option<&Decomposition>,
    truth: &GroundTruthModel,
) -> Result<RecoveryReport> {
    let p = truth.dim();
    check_dim(estimate.dim(), p)?;
    if let Some(d) = decomposition {
        check_dim(d.dim(), p)?;
    }
    let diff = estimate - &truth.sigma;
    let norms = diff.norms();

    let est_eig = estimate.eigenvalues()?;
    let true_eig = truth.sigma.eigenvalues()?;
    let eigen_distance = est_eig
        .iter()
        .zip(&true_eig)
        .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));

    let (inverse_spectral_loss, inverse_frobenius_loss) =
        match (invert_symmetric(estimate), invert_symmetric(&truth.sigma)) {
            (Ok(a), Ok(b)) => {
                let d = &a - &b;
                (Some(d.operator_norm()), Some(d.frobenius_norm()))
            }
            _ => (None, None),
        };

    let (rank_estimated, rank_correct, pct_true_positive, pct_true_negative) = match decomposition {
        Some(d) => {
            let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
            for i in 0..p {
                for j in 0..p {
                    let detected = d.sparse()[(i, j)].abs() > SUPPORT_CUTOFF;
                    if truth.true_support.contains(&(i, j)) {
                        pos += 1;
                        tp += usize::from(detected);
                    } else {
                        neg += 1;
                        tn += usize::from(!detected);
                    }
                }
            }
            let pct = |hit: usize, total: usize| {
                if total == 0 {
                    100.0
                } else {
                    100.0 * hit as f64 / total as f64
                }
            };
            (
                Some(d.rank()),
                Some(d.rank() == truth.true_rank),
                Some(pct(tp, pos)),
                Some(pct(tn, neg)),
            )
        }
        None => (None, None, None, None),
    };

    Ok(RecoveryReport {
        spectral_loss: norms.operator,
        frobenius_loss: norms.frobenius,
        max_loss: norms.max,
        rank_estimated,
        rank_correct,
        pct_true_positive,
        pct_true_negative,
        eigen_distance,
        inverse_spectral_loss,
        inverse_frobenius_loss,
    })
}

/// `|L̂ − L*|_F² + |Ŝ − S*|_F²`.
pub fn joint_frobenius(decomposition: &Decomposition, truth: &GroundTruthModel) -> Result<f64> {
    check_dim(decomposition.dim(), truth.dim())?;
    let dl = (decomposition.low_rank() - &truth.low_rank).frobenius_norm();
    let ds = (decomposition.sparse() - &truth.sparse).frobenius_norm();
    Ok(dl * dl + ds * ds)
}

/// Sign-invariant angle between two loading vectors: `(cosine, degrees)`
/// with the angle in `[0, 90]`.
pub fn loading_angle(u1: &DVector<f64>, u2: &DVector<f64>) -> Result<(f64, f64)> {
    check_dim(u1.len(), u2.len())?;
    let (n1, n2) = (u1.norm(), u2.norm());
    if n1 == 0.0 || n2 == 0.0 {
        return Err(LorecError::invalid("loading vectors must be nonzero"));
    }
    let cosine = (u1.dot(u2).abs() / (n1 * n2)).min(1.0);
    Ok((cosine, cosine.acos().to_degrees()))
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Mean and standard error (`sd/√m`) of one statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Option<MeanSe> {
        if values.is_empty() {
            return None;
        }
        let m = values.len();
        let mut acc = CompensatedSum::default();
        values.iter().for_each(|v| acc.add(*v));
        let mean = acc.value() / m as f64;
        let se = if m < 2 {
            0.0
        } else {
            let mut sq = CompensatedSum::default();
            values.iter().for_each(|v| sq.add((v - mean) * (v - mean)));
            (sq.value() / (m - 1) as f64).sqrt() / (m as f64).sqrt()
        };
        Some(MeanSe { mean, se, count: m })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub replications: usize,
    pub spectral_loss: MeanSe,
    pub frobenius_loss: MeanSe,
    pub max_loss: MeanSe,
    pub eigen_distance: MeanSe,
    pub rank_estimated: Option<MeanSe>,
    /// Percentage of replications with the exact rank.
    pub rank_correct_pct: Option<f64>,
    pub pct_true_positive: Option<MeanSe>,
    pub pct_true_negative: Option<MeanSe>,
    pub inverse_spectral_loss: Option<MeanSe>,
    pub inverse_frobenius_loss: Option<MeanSe>,
}

impl ReportSummary {
    /// `(statistic, mean, se)` rows in a fixed order, skipping absent ones.
    pub fn rows(&self) -> Vec<(&'static str, f64, f64)> {
        let mut rows = vec![
            ("spectral_loss", self.spectral_loss.mean, self.spectral_loss.se),
            ("frobenius_loss", self.frobenius_loss.mean, self.frobenius_loss.se),
            ("max_loss", self.max_loss.mean, self.max_loss.se),
            ("eigen_distance", self.eigen_distance.mean, self.eigen_distance.se),
        ];
        let optional = [
            ("rank_estimated", self.rank_estimated),
            ("pct_true_positive", self.pct_true_positive),
            ("pct_true_negative", self.pct_true_negative),
            ("inverse_spectral_loss", self.inverse_spectral_loss),
            ("inverse_frobenius_loss", self.inverse_frobenius_loss),
        ];
        for (name, stat) in optional {
            if let Some(s) = stat {
                rows.push((name, s.mean, s.se));
            }
        }
        if let Some(pct) = self.rank_correct_pct {
            rows.push(("rank_correct_pct", pct, f64::NAN));
        }
        rows
    }
}

/// Per-statistic mean and standard error over replications.
pub fn aggregate(reports: &[RecoveryReport]) -> Result<ReportSummary> {
    if reports.is_empty() {
        return Err(LorecError::invalid("cannot aggregate an empty report list"));
    }
    let collect = |f: &dyn Fn(&RecoveryReport) -> f64| -> MeanSe {
        let values: Vec<f64> = reports.iter().map(f).collect();
        MeanSe::of(&values).expect("nonempty")
    };
    let collect_opt = |f: &dyn Fn(&RecoveryReport) -> Option<f64>| -> Option<MeanSe> {
        let values: Vec<f64> = reports.iter().filter_map(f).collect();
        MeanSe::of(&values)
    };
    let rank_flags: Vec<bool> = reports.iter().filter_map(|r| r.rank_correct).collect();
    let rank_correct_pct = if rank_flags.is_empty() {
        None
    } else {
        Some(100.0 * rank_flags.iter().filter(|b| **b).count() as f64 / rank_flags.len() as f64)
    };
    Ok(ReportSummary {
        replications: reports.len(),
        spectral_loss: collect(&|r| r.spectral_loss),
        frobenius_loss: collect(&|r| r.frobenius_loss),
        max_loss: collect(&|r| r.max_loss),
        eigen_distance: collect(&|r| r.eigen_distance),
        rank_estimated: collect_opt(&|r| r.rank_estimated.map(|v| v as f64)),
        rank_correct_pct,
        pct_true_positive: collect_opt(&|r| r.pct_true_positive),
        pct_true_negative: collect_opt(&|r| r.pct_true_negative),
        inverse_spectral_loss: collect_opt(&|r| r.inverse_spectral_loss),
        inverse_frobenius_loss: collect_opt(&|r| r.inverse_frobenius_loss),
    })
}

fn opt_cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const REPORT_CSV_HEADER: &str = "spectral_loss,frobenius_loss,max_loss,rank_estimated,rank_correct,\
pct_true_positive,pct_true_negative,eigen_distance,inverse_spectral_loss,inverse_frobenius_loss";

impl RecoveryReport {
    /// One CSV row matching [`REPORT_CSV_HEADER`]; absent values are empty cells.
    pub fn csv_row(&self) -> String {
        [
            self.spectral_loss.to_string(),
            self.frobenius_loss.to_string(),
            self.max_loss.to_string(),
            opt_cell(self.rank_estimated),
            opt_cell(self.rank_correct),
            opt_cell(self.pct_true_positive),
            opt_cell(self.pct_true_negative),
            self.eigen_distance.to_string(),
            opt_cell(self.inverse_spectral_loss),
            opt_cell(self.inverse_frobenius_loss),
        ]
        .join(",")
    }
}

/// Writes a `family,estimator,p,statistic,mean,se` table.
pub fn write_summary_csv(
    mut out: impl Write,
    rows: &[(String, String, usize, ReportSummary)],
) -> Result<()> {
    writeln!(out, "family,estimator,p,statistic,mean,se")?;
    for (family, estimator, p, summary) in rows {
        for (stat, mean, se) in summary.rows() {
            let se = if se.is_nan() { String::new() } else { se.to_string() };
            writeln!(out, "{family},{estimator},{p},{stat},{mean},{se}")?;
        }
    }
    Ok(())
}
