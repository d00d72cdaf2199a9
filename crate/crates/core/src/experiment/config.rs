use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::admm::SgdSettings;
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, TtTarget};

pub const CONFIG_VERSION: u32 = 1;

fn default_momentum() -> f64 {
    0.9
}

fn default_batch() -> usize {
    64
}

fn default_rho() -> f64 {
    0.005
}

fn default_epsilon() -> f64 {
    1e-3
}

fn default_finetune_lr() -> f64 {
    1e-3
}

fn default_finetune_epochs() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub epochs: usize,
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

impl PhaseConfig {
    pub fn sgd(&self) -> SgdSettings {
        SgdSettings {
            lr: self.lr,
            momentum: self.momentum,
            batch_size: self.batch_size,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("{name}.lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "{name}.momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config(format!("{name}.batch_size must be >= 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    #[serde(default = "default_finetune_epochs")]
    pub epochs: usize,
    #[serde(default = "default_finetune_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: default_finetune_epochs(),
            lr: default_finetune_lr(),
            momentum: default_momentum(),
            batch_size: default_batch(),
        }
    }
}

impl FinetuneConfig {
    pub fn phase(&self) -> PhaseConfig {
        PhaseConfig {
            epochs: self.epochs,
            lr: self.lr,
            momentum: self.momentum,
            batch_size: self.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmmConfig {
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Relative residual `‖W − Z‖ / ‖W‖` at which to stop.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub max_iters: usize,
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

impl AdmmConfig {
    pub fn sgd(&self) -> SgdSettings {
        SgdSettings {
            lr: self.lr,
            momentum: self.momentum,
            batch_size: self.batch_size,
        }
    }
}

/// Where samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataConfig {
    /// A directory holding the four MNIST-named IDX files.
    Idx {
        dir: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_limit: Option<usize>,
    },
    /// Gaussian clusters; train and test share centroids.
    Synthetic {
        train_samples: usize,
        test_samples: usize,
        dims: usize,
        classes: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub model: Vec<LayerSpec>,
    /// Dense training before ADMM; zero epochs gives a cold start.
    pub pretrain: PhaseConfig,
    pub admm: AdmmConfig,
    #[serde(default)]
    pub finetune: FinetuneConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == CONFIG_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::Config(format!(
                    "schema_version {v} is not supported (expected {CONFIG_VERSION})"
                )))
            }
            None => return Err(Error::Config("missing schema_version".into())),
        }
        let config: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.is_empty() {
            return Err(Error::Config("model has no layers".into()));
        }
        self.pretrain.validate("pretrain")?;
        self.finetune.phase().validate("finetune")?;
        PhaseConfig {
            epochs: self.admm.max_iters,
            lr: self.admm.lr,
            momentum: self.admm.momentum,
            batch_size: self.admm.batch_size,
        }
        .validate("admm")?;
        if !(self.admm.rho > 0.0 && self.admm.rho.is_finite()) {
            return Err(Error::Config(format!(
                "admm.rho must be positive, got {}",
                self.admm.rho
            )));
        }
        if self.admm.epsilon.is_nan() || self.admm.epsilon <= 0.0 {
            return Err(Error::Config(format!(
                "admm.epsilon must be positive, got {}",
                self.admm.epsilon
            )));
        }
        if let DataConfig::Synthetic {
            train_samples,
            test_samples,
            dims,
            classes,
        } = &self.data
        {
            if *train_samples == 0 || *test_samples == 0 || *dims == 0 || *classes == 0 {
                return Err(Error::Config("synthetic data sizes must be >= 1".into()));
            }
        }
        for (i, spec) in self.model.iter().enumerate() {
            if let Some(t) = spec.tt_target() {
                t.map.validate().map_err(|e| Error::Config(format!("layer {i}: {e}")))?;
                t.clamped_ranks()
                    .map_err(|e| Error::Config(format!("layer {i}: {e}")))?;
            }
        }
        Ok(())
    }

    /// Dense layers that ADMM compresses, with their targets.
    pub fn compressed_layers(&self) -> Vec<(usize, TtTarget)> {
        self.model
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match s {
                LayerSpec::DenseFc { tt: Some(t), .. } | LayerSpec::DenseConv { tt: Some(t), .. } => {
                    Some((i, t.clone()))
                }
                _ => None,
            })
            .collect()
    }
}
