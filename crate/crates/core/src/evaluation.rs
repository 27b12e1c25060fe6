//! Per-trial error metrics, summary statistics, success/failure comparison.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::geometry::{angle_between, Vec3};
use crate::model::{Label, Trial};
use crate::solver::FitResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub trial_id: String,
    pub label: Label,
    /// N²
    pub final_mse: f64,
    /// m, absent without ground truth.
    pub localization_error: Option<f64>,
    /// Degrees, absent without ground truth.
    pub orientation_error: Option<f64>,
    /// s
    pub runtime: f64,
    pub converged: bool,
}

impl TrialMetrics {
    pub fn from_fit(trial: &Trial, fit: &FitResult) -> Self {
        let (localization_error, orientation_error) = match trial.ground_truth() {
            Some(truth) => (
                Some(localization_error(&fit.r_o_hat, &truth)),
                orientation_error(&fit.r_o_hat, &truth, &trial.initial_fruit_position()).ok(),
            ),
            None => (None, None),
        };
        Self {
            trial_id: trial.id().to_string(),
            label: trial.label(),
            final_mse: fit.final_mse,
            localization_error,
            orientation_error,
            runtime: fit.runtime,
            converged: fit.converged,
        }
    }
}

/// Euclidean distance between estimate and truth, m.
pub fn localization_error(r_hat: &Vec3, r_true: &Vec3) -> f64 {
    (r_hat - r_true).norm()
}

/// Angle at the initial fruit position between the true and estimated
/// attachment directions, degrees.
pub fn orientation_error(r_hat: &Vec3, r_true: &Vec3, r_a0: &Vec3) -> Result<f64> {
    angle_between(&(r_true - r_a0), &(r_hat - r_a0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub median: f64,
    /// Interquartile range from linearly interpolated quartiles.
    pub iqr: f64,
    pub mean: f64,
    /// Sample standard deviation (n − 1 divisor); 0 for a single value.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Quantile of sorted data with linear interpolation between order
/// statistics at position `(n - 1) p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Result<SummaryStats> {
    if values.is_empty() {
        return Err(Error::EmptyInput("summarize needs at least one value"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    // Sum in sorted order so the result does not depend on input order.
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(SummaryStats {
        n,
        median,
        iqr: iqr.max(0.0),
        mean,
        std,
        min: sorted[0],
        max: sorted[n - 1],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

/// Welch's unequal-variance two-sample t-test with Welch–Satterthwaite
/// degrees of freedom.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    for len in [a.len(), b.len()] {
        if len < 2 {
            return Err(Error::InsufficientSamples { needed: 2, got: len });
        }
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let sa = summarize(a)?;
    let sb = summarize(b)?;
    let va = sa.std.powi(2) / na;
    let vb = sb.std.powi(2) / nb;
    let se2 = va + vb;
    let diff = sa.mean - sb.mean;
    if se2 == 0.0 {
        // Both samples constant.
        return Ok(if diff == 0.0 {
            WelchTest { t: 0.0, df: na + nb - 2.0, p: 1.0 }
        } else {
            WelchTest {
                t: diff.signum() * f64::INFINITY,
                df: na + nb - 2.0,
                p: 0.0,
            }
        });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(WelchTest { t, df, p })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub n: usize,
    pub localization_error: SummaryStats,
    pub final_mse: SummaryStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassComparison {
    pub success: ClassStats,
    pub failure: ClassStats,
    pub localization_error_test: WelchTest,
    pub final_mse_test: WelchTest,
}

fn class_stats(metrics: &[TrialMetrics]) -> Result<(ClassStats, Vec<f64>, Vec<f64>)> {
    let loc: Vec<f64> = metrics.iter().filter_map(|m| m.localization_error).collect();
    let mse: Vec<f64> = metrics.iter().map(|m| m.final_mse).collect();
    if metrics.len() < 2 || loc.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: metrics.len().min(loc.len()),
        });
    }
    let stats = ClassStats {
        n: metrics.len(),
        localization_error: summarize(&loc)?,
        final_mse: summarize(&mse)?,
    };
    Ok((stats, loc, mse))
}

/// Per-class summaries of localization error and final MSE, with a Welch test
/// on each (success minus failure).
pub fn class_comparison(success: &[TrialMetrics], failure: &[TrialMetrics]) -> Result<ClassComparison> {
    let (s_stats, s_loc, s_mse) = class_stats(success)?;
    let (f_stats, f_loc, f_mse) = class_stats(failure)?;
    Ok(ClassComparison {
        success: s_stats,
        failure: f_stats,
        localization_error_test: welch_t_test(&s_loc, &f_loc)?,
        final_mse_test: welch_t_test(&s_mse, &f_mse)?,
    })
}
