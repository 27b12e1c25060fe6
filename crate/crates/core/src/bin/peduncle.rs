use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use peduncle_core::batch::{emit_plot_data, load_report, load_timing, run_batch, save_report, BatchOptions, PlotKind};
use peduncle_core::io::{load_corpus, load_trial, read_json, save_corpus, write_atomic};
use peduncle_core::model::bias_compensate;
use peduncle_core::simulator::{generate_corpus, SimConfig};
use peduncle_core::{fit, Error, FitResult, SolverConfig, Vec3};

const EXIT_VALIDATION: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "peduncle", version, about = "Attachment-point localization from pull force data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long = "failure-fraction")]
        failure_fraction: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a single trial and print the result as JSON.
    Fit {
        #[arg(long)]
        trial: PathBuf,
        #[arg(long = "no-bias-compensation")]
        no_bias_compensation: bool,
        #[arg(long = "solver-config")]
        solver_config: Option<PathBuf>,
        #[arg(long)]
        trace: bool,
    },
    /// Fit every trial of a corpus and write a report.
    Batch {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long = "solver-config")]
        solver_config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        report: PathBuf,
    },
    /// Export plot-ready CSV from a report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "plot-data")]
        plot_data: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct FitOutput<'a> {
    trial_id: &'a str,
    bias_compensation: bool,
    #[serde(flatten)]
    result: &'a FitResult,
    localization_error: Option<f64>,
    ground_truth: Option<Vec3>,
}

fn solver_config(path: Option<&Path>) -> Result<SolverConfig, Error> {
    let config = match path {
        Some(p) => read_json(p)?,
        None => SolverConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_VALIDATION,
    }
}

fn run(cli: Cli) -> Result<u8, (Error, u8)> {
    let fail = |e: Error| {
        let code = exit_code(&e);
        (e, code)
    };
    match cli.command {
        Command::Simulate {
            config,
            n,
            failure_fraction,
            seed,
            out,
        } => {
            let mut sim: SimConfig = read_json(&config).map_err(fail)?;
            sim.seed = seed;
            let records = generate_corpus(&sim, n, failure_fraction).map_err(fail)?;
            let trials: Vec<_> = records.into_iter().map(|r| r.trial).collect();
            let manifest = save_corpus(&out, &trials, Some(&sim)).map_err(fail)?;
            log::info!("wrote {} trials to {}", manifest.trials.len(), out.display());
            Ok(0)
        }
        Command::Fit {
            trial,
            no_bias_compensation,
            solver_config: config_path,
            trace,
        } => {
            let mut config = solver_config(config_path.as_deref()).map_err(fail)?;
            config.trace = config.trace || trace;
            let trial = load_trial(&trial).map_err(fail)?;
            let input = if no_bias_compensation { trial.clone() } else { bias_compensate(&trial) };
            // Numerical failures inside the solver count as non-convergence.
            let result = fit(&input, &config).map_err(|e| {
                let code = if e.is_validation() { EXIT_VALIDATION } else { EXIT_NOT_CONVERGED };
                (e, code)
            })?;
            let output = FitOutput {
                trial_id: trial.id(),
                bias_compensation: !no_bias_compensation,
                result: &result,
                localization_error: trial.ground_truth().map(|g| (result.r_o_hat - g).norm()),
                ground_truth: trial.ground_truth(),
            };
            println!("{}", serde_json::to_string_pretty(&output).expect("fit output serializes"));
            Ok(if result.converged { 0 } else { EXIT_NOT_CONVERGED })
        }
        Command::Batch {
            corpus,
            solver_config: config_path,
            jobs,
            report,
        } => {
            let options = BatchOptions {
                solver: solver_config(config_path.as_deref()).map_err(fail)?,
                jobs,
                bias_compensation: true,
            };
            let corpus = load_corpus(&corpus).map_err(fail)?;
            let output = run_batch(&corpus, &options).map_err(fail)?;
            save_report(&output, &report).map_err(fail)?;
            let failed = output.report.trials.iter().filter(|t| t.error.is_some()).count();
            if failed > 0 {
                log::warn!("{failed} trial(s) could not be fitted");
            }
            Ok(0)
        }
        Command::Report { input, plot_data, out } => {
            let kind: PlotKind = plot_data.parse().map_err(fail)?;
            let report = load_report(&input).map_err(fail)?;
            let timing = match kind {
                PlotKind::RuntimeHist => Some(load_timing(&input).map_err(fail)?),
                _ => None,
            };
            let csv = emit_plot_data(&report, timing.as_ref(), kind).map_err(fail)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| fail(Error::Io { path: parent.into(), source: e }))?;
            }
            write_atomic(&out, csv.as_bytes()).map_err(fail)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err((err, code)) => {
            eprintln!("error: {err}");
            ExitCode::from(code)
        }
    }
}
