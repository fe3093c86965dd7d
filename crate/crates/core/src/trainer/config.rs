use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How tasks are drawn for each sub-batch slot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Proportional to training-set size.
    #[default]
    Natural,
    Uniform,
}

impl std::str::FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "natural" => Ok(Sampling::Natural),
            "uniform" => Ok(Sampling::Uniform),
            other => Err(Error::Config(format!("unknown sampling policy `{other}`"))),
        }
    }
}

/// Stage-one multi-task training settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Examples per sub-batch.
    pub batch_size: usize,
    /// Sub-batches per super-batch.
    pub subbatches: usize,
    pub total_steps: usize,
    pub warmup_fraction: f64,
    pub peak_lr: f64,
    pub sampling: Sampling,
    pub seed: u64,
    pub grad_clip_max: f64,
    pub dropout_p: f64,
    pub eval_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            subbatches: 4,
            total_steps: 2000,
            warmup_fraction: 0.1,
            peak_lr: 1e-4,
            sampling: Sampling::Natural,
            seed: 0,
            grad_clip_max: 1.0,
            dropout_p: 0.1,
            eval_interval: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.subbatches == 0 || self.eval_interval == 0 {
            return Err(Error::Config(
                "batch_size, subbatches and eval_interval must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!(
                "warmup_fraction {} outside [0, 1]",
                self.warmup_fraction
            )));
        }
        if !self.peak_lr.is_finite() || self.peak_lr < 0.0 || self.grad_clip_max.is_nan() || self.grad_clip_max <= 0.0 {
            return Err(Error::Config(
                "peak_lr must be non-negative and grad_clip_max positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} outside [0, 1)", self.dropout_p)));
        }
        Ok(())
    }
}

/// Initialisation of an unseen task's gate during fine-tuning.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GateSource {
    /// Copy the gate of the named stage-one task.
    Reuse(String),
    Random,
}

impl std::str::FromStr for GateSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "random" => GateSource::Random,
            name => GateSource::Reuse(name.to_string()),
        })
    }
}

impl std::fmt::Display for GateSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GateSource::Reuse(name) => f.write_str(name),
            GateSource::Random => f.write_str("random"),
        }
    }
}

/// Stage-two single-task fine-tuning settings.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub gate_source: GateSource,
    pub max_epochs: usize,
    /// Epochs without improvement before stopping.
    pub patience: usize,
    pub peak_lr: f64,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    pub grad_clip_max: f64,
    pub dropout_p: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            gate_source: GateSource::Random,
            max_epochs: 10,
            patience: 2,
            peak_lr: 1e-4,
            batch_size: 16,
            warmup_fraction: 0.1,
            grad_clip_max: 1.0,
            dropout_p: 0.1,
            seed: 0,
        }
    }
}
