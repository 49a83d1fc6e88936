//! Run expansion, execution, and report emission.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use nrs_core::data::{load_idx_dataset, split_train_test, Dataset, Standardizer};
use nrs_core::hessian::{full_model_lambda_max, last_layer_lambda_max, HessianScope, SpectrumResult};
use nrs_core::network::{load_checkpoint, save_checkpoint, MlpSpec};
use nrs_core::trainer::{train, Strategy, TrainConfig, TrainingReport};
use nrs_core::{Error, Result};

use crate::config::{AnalysisBlock, DatasetBlock, ExperimentConfig, GridBlock};

pub const SUMMARY_HEADER: &str =
    "strategy,epsilon,alpha,seed,final_train_acc,final_test_acc,best_test_acc,lambda_max,wall_seconds";

/// Env var that overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "NRS_OUTPUT_DIR";

/// One expanded (strategy, epsilon, alpha, seed) work item.
#[derive(Debug, Clone, PartialEq)]
pub struct RunKey {
    pub strategy: Strategy,
    pub epsilon: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl RunKey {
    pub fn dir_name(&self) -> String {
        format!(
            "{}_eps{}_alpha{}_seed{}",
            self.strategy, self.epsilon, self.alpha, self.seed
        )
    }
}

/// Grid expansion: baseline ignores the grids, the perturbation-only strategy
/// expands over epsilon, the smoothing strategy over epsilon x alpha.
pub fn expand_runs(config: &ExperimentConfig) -> Vec<RunKey> {
    let mut runs = Vec::new();
    for &strategy in &config.strategies {
        match strategy {
            Strategy::Baseline => {
                for &seed in &config.seeds {
                    runs.push(RunKey { strategy, epsilon: 0.0, alpha: 0.0, seed });
                }
            }
            Strategy::Rpr => {
                for &epsilon in &config.epsilon_grid() {
                    for &seed in &config.seeds {
                        runs.push(RunKey { strategy, epsilon, alpha: 0.0, seed });
                    }
                }
            }
            Strategy::Nrs => {
                for &epsilon in &config.epsilon_grid() {
                    for &alpha in &config.alpha_grid() {
                        for &seed in &config.seeds {
                            runs.push(RunKey { strategy, epsilon, alpha, seed });
                        }
                    }
                }
            }
        }
    }
    runs
}

/// Build (train, test) splits from the dataset block, standardized with
/// training-split statistics when requested.
pub fn build_datasets(block: &DatasetBlock) -> Result<(Dataset, Dataset)> {
    let (raw_train, raw_test, standardize) = match block {
        DatasetBlock::TwoMoons { n, noise_sd, test_fraction, seed, standardize } => {
            let ds = nrs_core::data::gen_two_moons(*n, *noise_sd, *seed)?;
            let (tr, te) = split_train_test(&ds, *test_fraction, seed.wrapping_add(1))?;
            (tr, te, *standardize)
        }
        DatasetBlock::Blobs { n, centers, spread, test_fraction, seed, standardize } => {
            let ds = nrs_core::data::gen_blobs(*n, centers, *spread, *seed)?;
            let (tr, te) = split_train_test(&ds, *test_fraction, seed.wrapping_add(1))?;
            (tr, te, *standardize)
        }
        DatasetBlock::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            subset,
            standardize,
        } => {
            let tr = load_idx_dataset(train_images, train_labels, *subset, "idx_train".into())?;
            let te = load_idx_dataset(test_images, test_labels, *subset, "idx_test".into())?;
            (tr, te, *standardize)
        }
    };
    if standardize {
        let st = Standardizer::fit(&raw_train);
        Ok((st.apply(&raw_train)?, st.apply(&raw_test)?))
    } else {
        Ok((raw_train, raw_test))
    }
}

fn train_config_for(config: &ExperimentConfig, key: &RunKey, total_steps: usize) -> TrainConfig {
    let t = &config.train;
    TrainConfig {
        strategy: key.strategy,
        epsilon: key.epsilon,
        alpha: key.alpha,
        base_lr: t.base_lr,
        momentum: t.momentum,
        weight_decay: t.weight_decay,
        batch_size: t.batch_size,
        num_workers: t.num_workers,
        total_steps,
        label_smoothing: t.label_smoothing,
        global_seed: key.seed,
        scale_mode: t.scale_mode,
        ball_interior: t.ball_interior,
        parallel_workers: t.parallel_workers,
    }
}

/// The single-run configuration embedded in every report: re-running it
/// reproduces the run's metrics bit-identically.
fn resolved_single_run(config: &ExperimentConfig, key: &RunKey) -> ExperimentConfig {
    let mut single = config.clone();
    single.strategies = vec![key.strategy];
    single.seeds = vec![key.seed];
    single.grid = match key.strategy {
        Strategy::Baseline => None,
        Strategy::Rpr => Some(GridBlock { epsilon: Some(vec![key.epsilon]), alpha: None }),
        Strategy::Nrs => Some(GridBlock {
            epsilon: Some(vec![key.epsilon]),
            alpha: Some(vec![key.alpha]),
        }),
    };
    single
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub report: TrainingReport,
}

#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub key: RunKey,
    pub final_train_acc: f64,
    pub final_test_acc: f64,
    pub best_test_acc: f64,
    pub lambda_max: Option<f64>,
    pub wall_seconds: f64,
}

impl SummaryRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.key.strategy,
            self.key.epsilon,
            self.key.alpha,
            self.key.seed,
            self.final_train_acc,
            self.final_test_acc,
            self.best_test_acc,
            self.lambda_max.map_or(String::new(), |l| l.to_string()),
            self.wall_seconds,
        )
    }
}

fn analyze_params(
    spec: &MlpSpec,
    report: &TrainingReport,
    train_set: &Dataset,
    analysis: &AnalysisBlock,
) -> Result<SpectrumResult> {
    match analysis.scope {
        HessianScope::LastLayer => last_layer_lambda_max(
            spec,
            &report.final_params,
            &train_set.inputs,
            analysis.tol,
            100_000,
            analysis.power_seed,
        ),
        HessianScope::FullModel => full_model_lambda_max(
            spec,
            &report.final_params,
            &train_set.inputs,
            &train_set.labels,
            report.config.label_smoothing,
            analysis.tol,
            500,
            analysis.power_seed,
        ),
    }
}

/// Resolve the effective output directory (env override wins).
pub fn output_dir(config: &ExperimentConfig) -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| config.output_dir.clone())
}

/// Execute every expanded run sequentially, appending one summary row per
/// finished run so partial results survive a mid-sweep failure.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<SummaryRow>> {
    let out_dir = output_dir(config);
    fs::create_dir_all(&out_dir)?;
    let (train_set, test_set) = build_datasets(&config.dataset)?;
    let spec = config.model.to_spec()?;

    let steps_per_epoch = train_set.len() / config.train.batch_size;
    if steps_per_epoch == 0 {
        return Err(Error::Config(format!(
            "batch_size {} exceeds training split of {}",
            config.train.batch_size,
            train_set.len()
        )));
    }
    let total_steps = config.train.epochs * steps_per_epoch;

    let runs = expand_runs(config);
    let summary_path = out_dir.join("summary.csv");
    let mut summary = fs::File::create(&summary_path)?;
    writeln!(summary, "{SUMMARY_HEADER}")?;
    summary.flush()?;

    let mut rows = Vec::with_capacity(runs.len());
    for key in &runs {
        let t0 = Instant::now();
        let train_config = train_config_for(config, key, total_steps);
        train_config.validate()?;
        let mut report = train(&spec, &train_config, &train_set, &test_set)?;

        let lambda = if config.analysis.hessian {
            let s = analyze_params(&spec, &report, &train_set, &config.analysis)?;
            report.final_lambda_max = Some(s.lambda_max);
            Some(s.lambda_max)
        } else {
            None
        };

        let run_dir = out_dir.join(key.dir_name());
        fs::create_dir_all(&run_dir)?;
        let run_report = RunReport {
            config: resolved_single_run(config, key),
            report,
        };
        let json = serde_json::to_string_pretty(&run_report)
            .map_err(|e| Error::Data(format!("report serialization: {e}")))?;
        fs::write(run_dir.join("report.json"), json)?;
        let mut csv = fs::File::create(run_dir.join("epochs.csv"))?;
        run_report.report.write_epoch_csv(&mut csv)?;
        save_checkpoint(
            &run_dir.join("model.ckpt"),
            &spec,
            &run_report.report.final_params,
        )?;

        let row = SummaryRow {
            key: key.clone(),
            final_train_acc: run_report.report.final_train_acc(),
            final_test_acc: run_report.report.final_test_acc(),
            best_test_acc: run_report.report.best_test_acc(),
            lambda_max: lambda,
            wall_seconds: t0.elapsed().as_secs_f64(),
        };
        writeln!(summary, "{}", row.to_csv())?;
        summary.flush()?;
        rows.push(row);
    }
    Ok(rows)
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-strategy mean +/- sd table over all of a strategy's runs.
pub fn print_summary_table(rows: &[SummaryRow]) {
    println!("\n{:10} {:>5} {:>22} {:>22}", "strategy", "runs", "best_test_acc", "lambda_max");
    for strategy in [Strategy::Baseline, Strategy::Rpr, Strategy::Nrs] {
        let here: Vec<&SummaryRow> = rows.iter().filter(|r| r.key.strategy == strategy).collect();
        if here.is_empty() {
            continue;
        }
        let accs: Vec<f64> = here.iter().map(|r| r.best_test_acc).collect();
        let (am, asd) = mean_sd(&accs);
        let lams: Vec<f64> = here.iter().filter_map(|r| r.lambda_max).collect();
        let lam_text = if lams.is_empty() {
            "-".to_string()
        } else {
            let (lm, lsd) = mean_sd(&lams);
            format!("{lm:.4} ± {lsd:.4}")
        };
        println!(
            "{:10} {:>5} {:>22} {:>22}",
            strategy.to_string(),
            here.len(),
            format!("{am:.4} ± {asd:.4}"),
            lam_text
        );
    }
}

/// Spectral analysis of a saved checkpoint against a dataset block.
pub fn analyze_checkpoint(
    ckpt_path: &Path,
    data_block: &DatasetBlock,
    scope: HessianScope,
    tol: f64,
    power_seed: u64,
    out_csv: Option<&Path>,
) -> Result<SpectrumResult> {
    let (spec, params) = load_checkpoint(ckpt_path)?;
    let (train_set, _) = build_datasets(data_block)?;
    if train_set.dim() != spec.input_dim() {
        return Err(Error::Shape(format!(
            "analyze: dataset dim {} vs checkpoint input dim {}",
            train_set.dim(),
            spec.input_dim()
        )));
    }
    if train_set.num_classes > spec.output_dim() {
        return Err(Error::Data(format!(
            "analyze: {} classes vs {} outputs",
            train_set.num_classes,
            spec.output_dim()
        )));
    }
    let result = match scope {
        HessianScope::LastLayer => last_layer_lambda_max(
            &spec,
            &params,
            &train_set.inputs,
            tol,
            100_000,
            power_seed,
        )?,
        HessianScope::FullModel => full_model_lambda_max(
            &spec,
            &params,
            &train_set.inputs,
            &train_set.labels,
            0.0,
            tol,
            500,
            power_seed,
        )?,
    };
    if let Some(path) = out_csv {
        let fresh = !path.exists();
        let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(f, "scope,lambda_max,residual,iterations")?;
        }
        writeln!(
            f,
            "{},{},{},{}",
            result.scope, result.lambda_max, result.residual, result.iterations
        )?;
    }
    Ok(result)
}
