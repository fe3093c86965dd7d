use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which sub-layer sits in each block's feed-forward slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// A single FFN per block.
    Dense,
    /// MoE with one gate shared by every task.
    SharedGate,
    /// MoE with one gate per task.
    TaskGate,
}

impl Variant {
    pub fn is_sparse(self) -> bool {
        !matches!(self, Variant::Dense)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Dense => "dense",
            Variant::SharedGate => "shared_gate",
            Variant::TaskGate => "task_gate",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Variant::Dense),
            "shared_gate" => Ok(Variant::SharedGate),
            "task_gate" => Ok(Variant::TaskGate),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden: usize,
    pub ffn_inner: usize,
    pub num_heads: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub variant: Variant,
    pub num_experts: usize,
    pub num_tasks: usize,
    pub dropout_p: f64,
}

impl EncoderConfig {
    /// A small configuration with `F = 4H`.
    pub fn tiny(variant: Variant, num_experts: usize, num_tasks: usize) -> Self {
        Self {
            num_layers: 2,
            hidden: 16,
            ffn_inner: 64,
            num_heads: 2,
            max_seq_len: 32,
            vocab_size: 64,
            variant,
            num_experts,
            num_tasks,
            dropout_p: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.num_layers == 0 {
            return fail("num_layers must be at least 1".into());
        }
        if self.hidden == 0 || self.num_heads == 0 || !self.hidden.is_multiple_of(self.num_heads) {
            return fail(format!(
                "hidden {} must be a positive multiple of num_heads {}",
                self.hidden, self.num_heads
            ));
        }
        if self.ffn_inner == 0 || self.max_seq_len == 0 || self.vocab_size == 0 {
            return fail("ffn_inner, max_seq_len and vocab_size must be positive".into());
        }
        if self.num_experts == 0 {
            return fail("num_experts must be at least 1".into());
        }
        if self.variant == Variant::TaskGate && self.num_tasks == 0 {
            return fail("task_gate variant needs at least one task".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        Ok(())
    }

    /// Experts per layer; the dense variant always has exactly one FFN.
    pub fn experts(&self) -> usize {
        match self.variant {
            Variant::Dense => 1,
            _ => self.num_experts,
        }
    }

    /// Gates per layer: none for dense, one shared, or one per task.
    pub fn gates(&self) -> usize {
        match self.variant {
            Variant::Dense => 0,
            Variant::SharedGate => 1,
            Variant::TaskGate => self.num_tasks,
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }
}
