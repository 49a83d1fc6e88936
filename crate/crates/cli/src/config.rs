//! Experiment configuration: one JSON document with dataset, model, train,
//! optional grid, and analysis blocks. Unknown keys are rejected by name.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use nrs_core::hessian::HessianScope;
use nrs_core::network::{Activation, MlpSpec};
use nrs_core::perturb::ScaleMode;
use nrs_core::trainer::Strategy;
use nrs_core::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetBlock,
    pub model: ModelBlock,
    pub train: TrainBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridBlock>,
    #[serde(default)]
    pub analysis: AnalysisBlock,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub strategies: Vec<Strategy>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetBlock {
    TwoMoons {
        n: usize,
        noise_sd: f64,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_true")]
        standardize: bool,
    },
    Blobs {
        n: usize,
        centers: Vec<Vec<f64>>,
        spread: f64,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_true")]
        standardize: bool,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        subset: Option<usize>,
        #[serde(default = "default_true")]
        standardize: bool,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
}

impl ModelBlock {
    pub fn to_spec(&self) -> Result<MlpSpec> {
        MlpSpec::new(self.layer_widths.clone(), self.activation)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBlock {
    pub epochs: usize,
    pub base_lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub batch_size: usize,
    #[serde(default = "default_one")]
    pub num_workers: usize,
    #[serde(default)]
    pub label_smoothing: f64,
    /// Used when no grid block overrides it.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Used when no grid block overrides it.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub scale_mode: ScaleMode,
    #[serde(default)]
    pub ball_interior: bool,
    #[serde(default)]
    pub parallel_workers: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisBlock {
    #[serde(default = "default_true")]
    pub hessian: bool,
    #[serde(default = "default_scope")]
    pub scope: HessianScope,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_power_seed")]
    pub power_seed: u64,
}

impl Default for AnalysisBlock {
    fn default() -> Self {
        AnalysisBlock {
            hessian: true,
            scope: default_scope(),
            tol: default_tol(),
            power_seed: default_power_seed(),
        }
    }
}

fn default_test_fraction() -> f64 {
    0.25
}
fn default_true() -> bool {
    true
}
fn default_momentum() -> f64 {
    0.9
}
fn default_one() -> usize {
    1
}
fn default_epsilon() -> f64 {
    0.1
}
fn default_alpha() -> f64 {
    1.0
}
fn default_scope() -> HessianScope {
    HessianScope::LastLayer
}
fn default_tol() -> f64 {
    1e-6
}
fn default_power_seed() -> u64 {
    0
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("{e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be nonempty".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("strategies must be nonempty".into()));
        }
        for (i, s) in self.strategies.iter().enumerate() {
            if self.strategies[..i].contains(s) {
                return Err(Error::Config(format!("duplicate strategy {s:?}")));
            }
        }
        if let Some(grid) = &self.grid {
            if matches!(&grid.epsilon, Some(v) if v.is_empty()) {
                return Err(Error::Config("grid.epsilon must be nonempty when present".into()));
            }
            if matches!(&grid.alpha, Some(v) if v.is_empty()) {
                return Err(Error::Config("grid.alpha must be nonempty when present".into()));
            }
        }
        self.model.to_spec()?;
        Ok(())
    }

    pub fn epsilon_grid(&self) -> Vec<f64> {
        match self.grid.as_ref().and_then(|g| g.epsilon.clone()) {
            Some(v) => v,
            None => vec![self.train.epsilon],
        }
    }

    pub fn alpha_grid(&self) -> Vec<f64> {
        match self.grid.as_ref().and_then(|g| g.alpha.clone()) {
            Some(v) => v,
            None => vec![self.train.alpha],
        }
    }
}
