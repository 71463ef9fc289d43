//! Experiment configuration: TOML with one section per module.
//!
//! ```toml
//! [data]
//! min_count = 2
//!
//! [model]
//! d_model = 300
//!
//! [train]
//! mode = "psid"
//! lambda = 0.01
//!
//! [eval]
//! deadlines = [0.0, 30.0, 60.0, 120.0, 240.0, inf]
//! ```
//!
//! Missing keys take their defaults; unknown keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DEFAULT_MAX_SIZE, DEFAULT_MIN_COUNT};
use crate::error::{Error, Result};
use crate::model::{LossSettings, Mode, ModelConfig};
use crate::ssl::Similarity;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub min_count: usize,
    pub max_vocab: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            min_count: DEFAULT_MIN_COUNT,
            max_vocab: DEFAULT_MAX_SIZE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub lambda: f64,
    pub tau: f64,
    pub similarity: Similarity,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_max: f64,
    /// Defaults to `lr_max / 100` when absent.
    pub lr_min: Option<f64>,
    /// Epochs without a validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Share of each training split held out for early stopping.
    pub val_fraction: f64,
    /// k-means rounds run at the start of every epoch in the cluster mode.
    pub kmeans_rounds: usize,
    pub folds: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Psid,
            lambda: 0.01,
            tau: 1.0,
            similarity: Similarity::Dot,
            batch_size: 128,
            epochs: 200,
            lr_max: 1e-3,
            lr_min: None,
            patience: 20,
            val_fraction: 0.1,
            kmeans_rounds: 10,
            folds: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn lr_min(&self) -> f64 {
        self.lr_min.unwrap_or(self.lr_max / 100.0)
    }

    pub fn loss_settings(&self) -> LossSettings {
        LossSettings {
            lambda: self.lambda,
            tau: self.tau,
            similarity: self.similarity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be finite and non-negative, got {}", self.lambda));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.mode == Mode::Psid && self.batch_size < 2 {
            return bad("psid needs batch_size >= 2: in-batch negatives".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        let lr_min = self.lr_min();
        if !(self.lr_max > 0.0 && self.lr_max.is_finite()) || !(0.0..=self.lr_max).contains(&lr_min) {
            return bad(format!("need 0 <= lr_min <= lr_max, got {lr_min} and {}", self.lr_max));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction {} outside [0, 1)", self.val_fraction));
        }
        if self.folds < 2 {
            return bad(format!("need at least 2 folds, got {}", self.folds));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Detection deadlines in minutes, ascending; `inf` keeps whole trees.
    pub deadlines: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            deadlines: vec![0.0, 30.0, 60.0, 120.0, 240.0, f64::INFINITY],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        validate_deadlines(&self.deadlines)
    }
}

pub fn validate_deadlines(deadlines: &[f64]) -> Result<()> {
    if deadlines.is_empty() {
        return Err(Error::Config("at least one deadline is required".into()));
    }
    if deadlines.iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::Config(format!("deadlines must be non-negative, got {deadlines:?}")));
    }
    if deadlines.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("deadlines must be strictly ascending, got {deadlines:?}")));
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.max_vocab == 0 {
            return Err(Error::Config("max_vocab must be positive".into()));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()
    }

    /// Fills every derived default so the echo is self-contained.
    pub fn resolved(mut self) -> Self {
        self.train.lr_min = Some(self.train.lr_min());
        self
    }

    /// TOML text that parses back to this configuration.
    pub fn echo(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
