//! Experiment configuration: a TOML file with one section per concern.
//!
//! Every key is optional; omitted keys fall back to the defaults of the
//! reference cohort (58 hospital-like silos, 1400 binary drug-exposure
//! features, ~5.5% positive prevalence) and the training schedules used in
//! the baseline experiments. Unknown keys are rejected so that typos fail
//! loudly instead of silently running with defaults.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use fedsim_core::data::{GenSpec, SiloSizes};
use fedsim_core::fadl::FadlConfig;
use fedsim_core::federated::{AggregationWeighting, FedConfig};
use fedsim_core::training::TrainSpec;

use crate::CliError;

#[derive(Debug, Clone, Deserialize, Serialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub central: CentralSection,
    pub fedavg: FedavgSection,
    pub fadl: FadlSection,
}

/// Synthetic cohort layout; consumed by `gen-data`.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub seed: u64,
    pub n_silos: usize,
    pub feature_dim: usize,
    pub heterogeneity: f64,
    pub target_prevalence: f64,
    /// Train/validation/test fractions; must sum to 1.
    pub split: [f64; 3],
    pub sizes: SizesSection,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            seed: 42,
            n_silos: 58,
            feature_dim: 1400,
            heterogeneity: 0.7,
            target_prevalence: 0.055,
            split: [0.7, 0.1, 0.2],
            sizes: SizesSection::default(),
        }
    }
}

/// Per-silo sample counts. `lognormal` draws one size per silo (clipped to
/// [200, 20000]); `fixed` gives every silo the same count; `per_silo` lists
/// explicit counts (must match `n_silos`).
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SizesSection {
    Fixed { size: usize },
    PerSilo { sizes: Vec<usize> },
    Lognormal { median: f64, sigma: f64 },
}

impl Default for SizesSection {
    fn default() -> Self {
        Self::Lognormal { median: 1500.0, sigma: 0.8 }
    }
}

impl SizesSection {
    pub fn to_core(&self) -> SiloSizes {
        match self {
            Self::Fixed { size } => SiloSizes::Fixed(*size),
            Self::PerSilo { sizes } => SiloSizes::PerSilo(sizes.clone()),
            Self::Lognormal { median, sigma } => {
                SiloSizes::LogNormal { median: *median, sigma: *sigma }
            }
        }
    }
}

/// Network shape and weight initialization.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Hidden layer widths; the input and single-unit output layers are
    /// implied. An empty list yields logistic regression.
    pub hidden: Vec<usize>,
    pub init_seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { hidden: vec![500, 100], init_seed: 42 }
    }
}

/// Optimizer settings shared by every training regime.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { batch_size: 100, learning_rate: 0.01, lambda: 0.01 }
    }
}

/// Pooled training over all silos' train rows.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct CentralSection {
    pub epochs: usize,
    /// Shuffle seed for the pooled run.
    pub seed: u64,
}

impl Default for CentralSection {
    fn default() -> Self {
        Self { epochs: 30, seed: 7 }
    }
}

/// Federated averaging schedule.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedavgSection {
    pub global_cycles: usize,
    pub local_epochs: usize,
    pub master_seed: u64,
}

impl Default for FedavgSection {
    fn default() -> Self {
        Self { global_cycles: 20, local_epochs: 5, master_seed: 7 }
    }
}

/// Two-stage schedule: a federated stage followed by per-silo local
/// training with the first layer frozen.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct FadlSection {
    pub stage1_cycles: usize,
    pub stage1_local_epochs: usize,
    pub stage2_epochs: usize,
    pub master_seed: u64,
}

impl Default for FadlSection {
    fn default() -> Self {
        Self { stage1_cycles: 10, stage1_local_epochs: 5, stage2_epochs: 50, master_seed: 7 }
    }
}

impl Config {
    /// Read a config file, or fall back to the built-in defaults when no
    /// path is given. Parse failures and unknown keys are config errors.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
    }

    pub fn gen_spec(&self, seed_override: Option<u64>) -> GenSpec {
        GenSpec {
            n_silos: self.data.n_silos,
            sizes: self.data.sizes.to_core(),
            feature_dim: self.data.feature_dim,
            heterogeneity: self.data.heterogeneity,
            target_prevalence: self.data.target_prevalence,
            seed: seed_override.unwrap_or(self.data.seed),
        }
    }

    /// Layer widths for a given input dimension: input, hidden..., 1.
    pub fn layer_dims(&self, feature_dim: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.model.hidden.len() + 2);
        dims.push(feature_dim);
        dims.extend_from_slice(&self.model.hidden);
        dims.push(1);
        dims
    }

    pub fn central_spec(&self, seed_override: Option<u64>) -> TrainSpec {
        TrainSpec {
            epochs: self.central.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            lambda: self.train.lambda,
            shuffle_seed: seed_override.unwrap_or(self.central.seed),
            freeze_mask: None,
        }
    }

    pub fn fedavg_config(&self, seed_override: Option<u64>) -> FedConfig {
        FedConfig {
            global_cycles: self.fedavg.global_cycles,
            local_epochs: self.fedavg.local_epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            lambda: self.train.lambda,
            master_seed: seed_override.unwrap_or(self.fedavg.master_seed),
            weighting: AggregationWeighting::ByTrainCount,
        }
    }

    pub fn fadl_config(&self, seed_override: Option<u64>) -> FadlConfig {
        FadlConfig {
            stage1_cycles: self.fadl.stage1_cycles,
            stage1_local_epochs: self.fadl.stage1_local_epochs,
            stage2_epochs: self.fadl.stage2_epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            lambda: self.train.lambda,
            master_seed: seed_override.unwrap_or(self.fadl.master_seed),
        }
    }

    /// Canonical JSON snapshot of the hyperparameters that affect a run's
    /// artifacts. Used both in the run manifest and in the run-id hash.
    pub fn resolved_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Human-readable one-line summary of the active schedule.
    pub fn describe_mode(&self, mode: &str) -> String {
        let mut s = String::new();
        match mode {
            "central" => {
                let _ = write!(s, "{} epochs", self.central.epochs);
            }
            "fedavg" => {
                let _ = write!(
                    s,
                    "{} cycles x {} local epochs",
                    self.fedavg.global_cycles, self.fedavg.local_epochs
                );
            }
            "fadl" => {
                let _ = write!(
                    s,
                    "{} cycles x {} local epochs, then {} specialization epochs",
                    self.fadl.stage1_cycles, self.fadl.stage1_local_epochs, self.fadl.stage2_epochs
                );
            }
            _ => {}
        }
        let _ = write!(
            s,
            " (batch {}, lr {}, lambda {})",
            self.train.batch_size, self.train.learning_rate, self.train.lambda
        );
        s
    }
}
