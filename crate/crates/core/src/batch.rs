//! Corpus fitting, reports and plot-ready tables.
//!
//! The report holds only values that are reproducible from the corpus and the
//! solver configuration, so two runs over the same inputs write identical
//! bytes whatever the degree of parallelism. Wall-clock runtimes live in a
//! separate timing file next to the report (see [`timing_path`]).

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{class_comparison, summarize, ClassComparison, SummaryStats, TrialMetrics};
use crate::geometry::Vec3;
use crate::io::{read_json, write_json, Corpus};
use crate::model::{bias_compensate, Label, Trial};
use crate::simulator::SimConfig;
use crate::solver::{fit, SolverConfig};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const QUANTILE_METHOD: &str = "linear interpolation between order statistics at (n-1)p";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub id: String,
    pub label: Label,
    pub status: TrialStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub converged: bool,
    pub final_mse: Option<f64>,
    pub localization_error: Option<f64>,
    pub orientation_error: Option<f64>,
    pub iterations: Option<usize>,
    pub restarts: Option<usize>,
    pub max_constraint_violation: Option<f64>,
    pub r_o_hat: Option<Vec3>,
    pub ground_truth: Option<Vec3>,
    /// Estimate and truth in the sensor frame at the first sample.
    pub r_o_hat_sensor0: Option<Vec3>,
    pub ground_truth_sensor0: Option<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummaries {
    pub n_trials: usize,
    pub n_fitted: usize,
    pub n_converged: usize,
    pub final_mse: Option<SummaryStats>,
    pub localization_error: Option<SummaryStats>,
    pub orientation_error: Option<SummaryStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub overall: MetricSummaries,
    pub success: Option<MetricSummaries>,
    pub failure: Option<MetricSummaries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusInfo {
    pub n_trials: usize,
    pub seed: Option<u64>,
    pub config_digest: Option<String>,
    pub sim_config: Option<SimConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema_version: u32,
    pub corpus: CorpusInfo,
    pub solver_config: SolverConfig,
    pub bias_compensation: bool,
    pub quantile_method: String,
    pub trials: Vec<TrialReport>,
    pub summary: ReportSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_comparison: Option<ClassComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTiming {
    pub id: String,
    /// s
    pub runtime: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingFile {
    pub trials: Vec<TrialTiming>,
    pub all: Option<SummaryStats>,
    pub converged_only: Option<SummaryStats>,
}

#[derive(Debug, Clone)]
pub struct BatchOptions {
    pub solver: SolverConfig,
    pub jobs: usize,
    pub bias_compensation: bool,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            jobs: 1,
            bias_compensation: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub report: ReportFile,
    pub timing: TimingFile,
    pub metrics: Vec<TrialMetrics>,
}

struct Outcome {
    report: TrialReport,
    metrics: Option<TrialMetrics>,
}

fn failed(id: &str, label: Label, error: String) -> Outcome {
    Outcome {
        report: TrialReport {
            id: id.to_string(),
            label,
            status: TrialStatus::Failed,
            error: Some(error),
            converged: false,
            final_mse: None,
            localization_error: None,
            orientation_error: None,
            iterations: None,
            restarts: None,
            max_constraint_violation: None,
            r_o_hat: None,
            ground_truth: None,
            r_o_hat_sensor0: None,
            ground_truth_sensor0: None,
        },
        metrics: None,
    }
}

fn fit_one(trial: &Trial, options: &BatchOptions) -> Outcome {
    let input = if options.bias_compensation {
        bias_compensate(trial)
    } else {
        trial.clone()
    };
    let result = match fit(&input, &options.solver) {
        Ok(r) => r,
        Err(e) => return failed(trial.id(), trial.label(), e.to_string()),
    };
    let metrics = TrialMetrics::from_fit(trial, &result);
    let to_sensor0 = trial.samples()[0].pose.inverse();
    Outcome {
        report: TrialReport {
            id: trial.id().to_string(),
            label: trial.label(),
            status: TrialStatus::Ok,
            error: None,
            converged: result.converged,
            final_mse: Some(result.final_mse),
            localization_error: metrics.localization_error,
            orientation_error: metrics.orientation_error,
            iterations: Some(result.iterations_total),
            restarts: Some(result.restarts_used),
            max_constraint_violation: Some(result.max_constraint_violation),
            r_o_hat: Some(result.r_o_hat),
            ground_truth: trial.ground_truth(),
            r_o_hat_sensor0: Some(to_sensor0.transform_point(&result.r_o_hat)),
            ground_truth_sensor0: trial.ground_truth().map(|g| to_sensor0.transform_point(&g)),
        },
        metrics: Some(metrics),
    }
}

fn summarize_opt(values: Vec<f64>) -> Option<SummaryStats> {
    summarize(&values).ok()
}

fn metric_summaries(reports: &[&TrialReport]) -> MetricSummaries {
    let ok: Vec<&&TrialReport> = reports.iter().filter(|r| r.status == TrialStatus::Ok).collect();
    MetricSummaries {
        n_trials: reports.len(),
        n_fitted: ok.len(),
        n_converged: ok.iter().filter(|r| r.converged).count(),
        final_mse: summarize_opt(ok.iter().filter_map(|r| r.final_mse).collect()),
        localization_error: summarize_opt(ok.iter().filter_map(|r| r.localization_error).collect()),
        orientation_error: summarize_opt(ok.iter().filter_map(|r| r.orientation_error).collect()),
    }
}

fn class_summary(reports: &[TrialReport], label: Label) -> Option<MetricSummaries> {
    let subset: Vec<&TrialReport> = reports.iter().filter(|r| r.label == label).collect();
    (!subset.is_empty()).then(|| metric_summaries(&subset))
}

/// Fits every trial of a corpus. Per-trial failures (unreadable files,
/// solver errors) are recorded in the report and never abort the batch.
pub fn run_batch(corpus: &Corpus, options: &BatchOptions) -> Result<BatchOutput> {
    options.solver.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;

    let outcomes: Vec<Outcome> = pool.install(|| {
        corpus
            .entries
            .par_iter()
            .map(|entry| match &entry.trial {
                Ok(trial) => fit_one(trial, options),
                Err(e) => failed(&entry.entry.id, entry.entry.label, e.clone()),
            })
            .collect()
    });

    let metrics: Vec<TrialMetrics> = outcomes.iter().filter_map(|o| o.metrics.clone()).collect();
    let trials: Vec<TrialReport> = outcomes.into_iter().map(|o| o.report).collect();

    let all: Vec<&TrialReport> = trials.iter().collect();
    let summary = ReportSummary {
        overall: metric_summaries(&all),
        success: class_summary(&trials, Label::Success),
        failure: class_summary(&trials, Label::Failure),
    };

    let success: Vec<TrialMetrics> = metrics.iter().filter(|m| m.label == Label::Success).cloned().collect();
    let failure: Vec<TrialMetrics> = metrics.iter().filter(|m| m.label == Label::Failure).cloned().collect();
    let comparison = if !success.is_empty() && !failure.is_empty() {
        match class_comparison(&success, &failure) {
            Ok(c) => Some(c),
            Err(e) => {
                log::warn!("class comparison skipped: {e}");
                None
            }
        }
    } else {
        None
    };

    let timing = TimingFile {
        trials: trials
            .iter()
            .map(|r| TrialTiming {
                id: r.id.clone(),
                runtime: metrics.iter().find(|m| m.trial_id == r.id).map(|m| m.runtime),
                converged: r.converged,
            })
            .collect(),
        all: summarize_opt(metrics.iter().map(|m| m.runtime).collect()),
        converged_only: summarize_opt(metrics.iter().filter(|m| m.converged).map(|m| m.runtime).collect()),
    };

    let report = ReportFile {
        schema_version: REPORT_SCHEMA_VERSION,
        corpus: CorpusInfo {
            n_trials: corpus.entries.len(),
            seed: corpus.manifest.seed,
            config_digest: corpus.manifest.config_digest.clone(),
            sim_config: corpus.manifest.sim_config.clone(),
        },
        solver_config: options.solver.clone(),
        bias_compensation: options.bias_compensation,
        quantile_method: QUANTILE_METHOD.to_string(),
        trials,
        summary,
        class_comparison: comparison,
    };
    Ok(BatchOutput {
        report,
        timing,
        metrics,
    })
}

/// `report.json` → `report.timing.json`.
pub fn timing_path(report: &Path) -> PathBuf {
    let stem = report
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    report.with_file_name(format!("{stem}.timing.json"))
}

pub fn save_report(output: &BatchOutput, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_json(path, &output.report)?;
    write_json(&timing_path(path), &output.timing)
}

pub fn load_report(path: impl AsRef<Path>) -> Result<ReportFile> {
    read_json(path.as_ref())
}

pub fn load_timing(report_path: impl AsRef<Path>) -> Result<TimingFile> {
    read_json(&timing_path(report_path.as_ref()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    ErrorVsMse,
    RuntimeHist,
    JointLocations,
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error_vs_mse" => Ok(PlotKind::ErrorVsMse),
            "runtime_hist" => Ok(PlotKind::RuntimeHist),
            "joint_locations" => Ok(PlotKind::JointLocations),
            other => Err(Error::UnknownPlotKind(other.to_string())),
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_vec(v: Option<Vec3>) -> [String; 3] {
    match v {
        Some(p) => [p.x.to_string(), p.y.to_string(), p.z.to_string()],
        None => Default::default(),
    }
}

/// CSV with one header row and one row per fitted trial. `runtime_hist`
/// needs the timing file.
pub fn emit_plot_data(report: &ReportFile, timing: Option<&TimingFile>, kind: PlotKind) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidConfig(format!("csv: {e}"));
    let fitted = report.trials.iter().filter(|t| t.status == TrialStatus::Ok);
    match kind {
        PlotKind::ErrorVsMse => {
            w.write_record(["final_mse", "localization_error", "orientation_error", "label"])
                .map_err(csv_err)?;
            for t in fitted {
                w.write_record([
                    fmt_opt(t.final_mse),
                    fmt_opt(t.localization_error),
                    fmt_opt(t.orientation_error),
                    t.label.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        PlotKind::RuntimeHist => {
            let timing = timing.ok_or_else(|| Error::MissingData("runtime_hist needs the timing file".into()))?;
            w.write_record(["trial_id", "runtime", "converged"]).map_err(csv_err)?;
            for t in timing.trials.iter().filter(|t| t.runtime.is_some()) {
                w.write_record([t.id.clone(), fmt_opt(t.runtime), t.converged.to_string()])
                    .map_err(csv_err)?;
            }
        }
        PlotKind::JointLocations => {
            w.write_record([
                "trial_id", "label", "true_x", "true_y", "true_z", "est_x", "est_y", "est_z",
                "true_s0_x", "true_s0_y", "true_s0_z", "est_s0_x", "est_s0_y", "est_s0_z",
            ])
            .map_err(csv_err)?;
            for t in fitted {
                let mut row = vec![t.id.clone(), t.label.to_string()];
                row.extend(fmt_vec(t.ground_truth));
                row.extend(fmt_vec(t.r_o_hat));
                row.extend(fmt_vec(t.ground_truth_sensor0));
                row.extend(fmt_vec(t.r_o_hat_sensor0));
                w.write_record(&row).map_err(csv_err)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidConfig(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
