//! `nrs` — strategy comparison runs, grid sweeps, and checkpoint analysis.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error.

mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nrs_core::hessian::HessianScope;
use nrs_core::Error;

use config::{DatasetBlock, ExperimentConfig};

#[derive(Parser)]
#[command(name = "nrs", about = "Flat-minima training laboratory", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (strategy, grid point, seed) combination of an experiment
    /// config and emit summary/per-run reports.
    Run {
        /// Path to the experiment JSON document.
        config: PathBuf,
    },
    /// Compute the dominant Hessian eigenvalue of a saved checkpoint.
    Analyze {
        /// Path to a model checkpoint.
        checkpoint: PathBuf,
        /// Path to a JSON file holding a dataset block.
        #[arg(long)]
        data: PathBuf,
        /// Parameter block to analyze.
        #[arg(long, value_enum, default_value = "last-layer")]
        scope: ScopeArg,
        /// Power-iteration relative tolerance.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Seed of the power-iteration start vector.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV file to append the result row to (defaults to analysis.csv
        /// beside the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ScopeArg {
    LastLayer,
    Full,
}

impl From<ScopeArg> for HessianScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::LastLayer => HessianScope::LastLayer,
            ScopeArg::Full => HessianScope::FullModel,
        }
    }
}

fn exit_code_for(e: &Error) -> ExitCode {
    match e {
        Error::Config(_) | Error::Shape(_) | Error::Data(_) | Error::Parse { .. } => {
            ExitCode::from(1)
        }
        _ => ExitCode::from(2),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let experiment = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(1);
                }
            };
            match runner::run_experiment(&experiment) {
                Ok(rows) => {
                    runner::print_summary_table(&rows);
                    println!(
                        "\n{} runs -> {}",
                        rows.len(),
                        runner::output_dir(&experiment).join("summary.csv").display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("{e}");
                    // config-shaped failures before any training are usage errors
                    exit_code_for(&e)
                }
            }
        }
        Command::Analyze { checkpoint, data, scope, tol, seed, out } => {
            let block: DatasetBlock = match std::fs::read_to_string(&data)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", data.display())))
                .and_then(|text| {
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{e}")))
                }) {
                Ok(b) => b,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(1);
                }
            };
            let out_csv = out.or_else(|| {
                checkpoint
                    .parent()
                    .map(|d| d.join("analysis.csv"))
            });
            match runner::analyze_checkpoint(
                &checkpoint,
                &block,
                scope.into(),
                tol,
                seed,
                out_csv.as_deref(),
            ) {
                Ok(r) => {
                    println!(
                        "scope={} lambda_max={} residual={:e} iterations={}",
                        r.scope, r.lambda_max, r.residual, r.iterations
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("{e}");
                    exit_code_for(&e)
                }
            }
        }
    }
}
