//! Transformer encoder whose feed-forward sub-layers are dense FFNs or
//! top-1 Mixture-of-Experts layers behind shared or per-task gates.

pub(crate) mod block;
mod config;
mod model;
mod moe;

pub use block::{encoder_forward, transformer_block_forward, BlockRouting, EncoderOutput, RoutingTrace, TokenBatch};
pub use config::{EncoderConfig, Variant};
pub use model::{
    fresh_init, init_from_dense, init_param, DenseCheckpointView, GateInit, MtlModel, GATE_INIT_STD, WEIGHT_INIT_STD,
};
pub use moe::{expert_forward, gate_logits, moe_layer_forward, route_top1, Dispatch, MoeOutput, RoutingDecision};

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamSet, Real, Tensor};

/// Role of a parameter, used to pick its initialiser.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Embedding,
    Weight,
    Bias,
    NormGain,
    NormBias,
    Gate,
    HeadWeight,
    HeadBias,
}

/// Produces the initial tensor for each parameter during construction.
pub type ParamSource<'a, F> = dyn FnMut(&str, &[usize], ParamKind) -> Result<Tensor<F>> + 'a;

pub(crate) struct Builder<'s, 'a, F> {
    pub params: ParamSet<F>,
    source: &'s mut ParamSource<'a, F>,
}

impl<'s, 'a, F: Real> Builder<'s, 'a, F> {
    pub fn new(source: &'s mut ParamSource<'a, F>) -> Self {
        Self {
            params: ParamSet::new(),
            source,
        }
    }

    pub fn add(&mut self, name: String, shape: &[usize], kind: ParamKind) -> Result<ParamId> {
        let t = (self.source)(&name, shape, kind)?;
        if t.shape() != shape {
            return Err(Error::Checkpoint(format!(
                "`{name}` has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        Ok(self.params.add(name, t))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionParams {
    pub query: LinearParams,
    pub key: LinearParams,
    pub value: LinearParams,
    pub output: LinearParams,
}

/// One FFN: `w_in: [F×H]`, `b_in: [F]`, `w_out: [H×F]`, `b_out: [H]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExpertParams {
    pub w_in: ParamId,
    pub b_in: ParamId,
    pub w_out: ParamId,
    pub b_out: ParamId,
}

/// Gate projection `W_g: [N×H]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GateParams {
    pub weight: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MoeParams {
    pub variant: Variant,
    pub experts: Vec<ExpertParams>,
    pub gates: Vec<GateParams>,
}

impl MoeParams {
    /// Gate used for `task_id`: the task's own gate, or gate 0 when shared.
    pub fn gate_for(&self, task_id: usize) -> Result<GateParams> {
        match self.variant {
            Variant::TaskGate => self
                .gates
                .get(task_id)
                .copied()
                .ok_or_else(|| Error::Task(format!("task id {task_id} has no gate (only {})", self.gates.len()))),
            _ => self
                .gates
                .first()
                .copied()
                .ok_or_else(|| Error::Task("MoE layer has no gate".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FfnParams {
    Dense(ExpertParams),
    Sparse(MoeParams),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockParams {
    pub attention: AttentionParams,
    pub attention_norm: NormParams,
    pub ffn: FfnParams,
    pub ffn_norm: NormParams,
}

/// Parameter handles of the encoder body.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub token_embedding: ParamId,
    pub position_embedding: ParamId,
    pub blocks: Vec<BlockParams>,
}

pub(crate) fn expert_names(prefix: &str) -> [String; 4] {
    ["w_in", "b_in", "w_out", "b_out"].map(|s| format!("{prefix}.{s}"))
}

impl Encoder {
    pub(crate) fn build<F: Real>(config: &EncoderConfig, b: &mut Builder<'_, '_, F>) -> Result<Self> {
        config.validate()?;
        let (h, f) = (config.hidden, config.ffn_inner);
        let token_embedding = b.add("embeddings.token".into(), &[config.vocab_size, h], ParamKind::Embedding)?;
        let position_embedding = b.add(
            "embeddings.position".into(),
            &[config.max_seq_len, h],
            ParamKind::Embedding,
        )?;
        let mut blocks = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let linear = |b: &mut Builder<'_, '_, F>, name: &str| -> Result<LinearParams> {
                Ok(LinearParams {
                    weight: b.add(
                        format!("layers.{l}.attention.{name}.weight"),
                        &[h, h],
                        ParamKind::Weight,
                    )?,
                    bias: b.add(format!("layers.{l}.attention.{name}.bias"), &[h], ParamKind::Bias)?,
                })
            };
            let attention = AttentionParams {
                query: linear(b, "query")?,
                key: linear(b, "key")?,
                value: linear(b, "value")?,
                output: linear(b, "output")?,
            };
            let norm = |b: &mut Builder<'_, '_, F>, name: &str| -> Result<NormParams> {
                Ok(NormParams {
                    gain: b.add(format!("layers.{l}.{name}.gain"), &[h], ParamKind::NormGain)?,
                    bias: b.add(format!("layers.{l}.{name}.bias"), &[h], ParamKind::NormBias)?,
                })
            };
            let attention_norm = norm(b, "attention_norm")?;
            let expert = |b: &mut Builder<'_, '_, F>, prefix: String| -> Result<ExpertParams> {
                let [w_in, b_in, w_out, b_out] = expert_names(&prefix);
                Ok(ExpertParams {
                    w_in: b.add(w_in, &[f, h], ParamKind::Weight)?,
                    b_in: b.add(b_in, &[f], ParamKind::Bias)?,
                    w_out: b.add(w_out, &[h, f], ParamKind::Weight)?,
                    b_out: b.add(b_out, &[h], ParamKind::Bias)?,
                })
            };
            let ffn = if config.variant.is_sparse() {
                let experts = (0..config.experts())
                    .map(|i| expert(b, format!("layers.{l}.experts.{i}")))
                    .collect::<Result<Vec<_>>>()?;
                let gates = (0..config.gates())
                    .map(|t| {
                        Ok(GateParams {
                            weight: b.add(
                                format!("layers.{l}.gates.{t}.weight"),
                                &[config.num_experts, h],
                                ParamKind::Gate,
                            )?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                FfnParams::Sparse(MoeParams {
                    variant: config.variant,
                    experts,
                    gates,
                })
            } else {
                FfnParams::Dense(expert(b, format!("layers.{l}.ffn"))?)
            };
            let ffn_norm = norm(b, "ffn_norm")?;
            blocks.push(BlockParams {
                attention,
                attention_norm,
                ffn,
                ffn_norm,
            });
        }
        Ok(Self {
            config: config.clone(),
            token_embedding,
            position_embedding,
            blocks,
        })
    }

    /// Expert FFNs of layer `l` (a single one for dense layers).
    pub fn experts(&self, l: usize) -> Vec<ExpertParams> {
        match &self.blocks[l].ffn {
            FfnParams::Dense(e) => vec![*e],
            FfnParams::Sparse(m) => m.experts.clone(),
        }
    }
}
