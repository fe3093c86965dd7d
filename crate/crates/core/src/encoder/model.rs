use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::encoder::block::{encoder_forward, EncoderOutput, TokenBatch};
use crate::encoder::{Builder, Encoder, EncoderConfig, FfnParams, ParamKind, ParamSource, Variant};
use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, ParamSet, Real, Tensor};
use crate::tasks::{head_logits, TaskHead, TaskRegistry, TaskSpec, Vocab};

/// Standard deviation of weight and embedding initialisation.
pub const WEIGHT_INIT_STD: f64 = 0.02;
/// Standard deviation of freshly initialised gate weights.
pub const GATE_INIT_STD: f64 = 0.001;

/// Encoder plus one output head per task, with all parameters in one set.
#[derive(Clone, Debug)]
pub struct MtlModel<F> {
    pub params: ParamSet<F>,
    pub encoder: Encoder,
    pub heads: Vec<TaskHead>,
    pub registry: TaskRegistry,
    pub vocab: Option<Vocab>,
}

/// How the gate of a newly added task is initialised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateInit {
    /// Small random weights.
    Random,
    /// A copy of the gate of an existing task.
    CopyFrom(usize),
}

/// The parts of a trained dense model needed to seed an MoE model.
#[derive(Clone, Copy, Debug)]
pub struct DenseCheckpointView<'a, F> {
    pub config: &'a EncoderConfig,
    pub params: &'a ParamSet<F>,
    pub registry: &'a TaskRegistry,
    pub vocab: Option<&'a Vocab>,
}

impl<'a, F: Real> From<&'a MtlModel<F>> for DenseCheckpointView<'a, F> {
    fn from(m: &'a MtlModel<F>) -> Self {
        Self {
            config: m.config(),
            params: &m.params,
            registry: &m.registry,
            vocab: m.vocab.as_ref(),
        }
    }
}

fn normal<F: Real, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<F> {
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| F::lit(dist.sample(rng))).collect()).expect("shape matches")
}

/// Initial value for a parameter of the given role.
pub fn init_param<F: Real, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], kind: ParamKind) -> Tensor<F> {
    match kind {
        ParamKind::NormGain => Tensor::filled(shape, F::one()),
        ParamKind::Bias | ParamKind::NormBias | ParamKind::HeadBias => Tensor::zeros(shape),
        ParamKind::Gate => normal(rng, shape, GATE_INIT_STD),
        ParamKind::Embedding | ParamKind::Weight | ParamKind::HeadWeight => normal(rng, shape, WEIGHT_INIT_STD),
    }
}

impl<F: Real> MtlModel<F> {
    /// Lays out every parameter in canonical order, asking `source` for
    /// each initial tensor.
    pub fn build(config: &EncoderConfig, registry: &TaskRegistry, source: &mut ParamSource<'_, F>) -> Result<Self> {
        registry.validate()?;
        if config.num_tasks != registry.len() {
            return Err(Error::Config(format!(
                "config declares {} tasks but the registry has {}",
                config.num_tasks,
                registry.len()
            )));
        }
        let mut b = Builder::new(source);
        let encoder = Encoder::build(config, &mut b)?;
        let heads = registry
            .tasks()
            .iter()
            .enumerate()
            .map(|(t, spec)| TaskHead::build(&mut b, t, spec, config.hidden))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            params: b.params,
            encoder,
            heads,
            registry: registry.clone(),
            vocab: None,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.encoder.config
    }

    pub fn with_vocab(mut self, vocab: Vocab) -> Self {
        self.vocab = Some(vocab);
        self
    }

    pub fn num_tasks(&self) -> usize {
        self.heads.len()
    }

    pub fn head(&self, task_id: usize) -> Result<&TaskHead> {
        self.heads
            .get(task_id)
            .ok_or_else(|| Error::Task(format!("task id {task_id} out of range 0..{}", self.heads.len())))
    }

    /// Encoder pass for one task-homogeneous batch.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<F>,
        batch: &TokenBatch,
        task_id: usize,
        training: bool,
        rng: &mut R,
    ) -> Result<EncoderOutput> {
        self.head(task_id)?;
        encoder_forward(g, &self.params, &self.encoder, batch, task_id, training, rng)
    }

    /// Encoder pass followed by the task head; returns the encoder output
    /// and the head's unnormalised outputs `[batch × outputs]`.
    pub fn forward_head<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<F>,
        batch: &TokenBatch,
        task_id: usize,
        training: bool,
        rng: &mut R,
    ) -> Result<(EncoderOutput, NodeId)> {
        let out = self.forward(g, batch, task_id, training, rng)?;
        let logits = head_logits(g, &self.params, self.head(task_id)?, out.pooled)?;
        Ok((out, logits))
    }

    /// Gate weights `[N×H]` of `layer` used by `task_id`.
    pub fn gate_weights(&self, layer: usize, task_id: usize) -> Result<&Tensor<F>> {
        let block = self
            .encoder
            .blocks
            .get(layer)
            .ok_or_else(|| Error::Input(format!("layer {layer} out of range")))?;
        match &block.ffn {
            FfnParams::Sparse(m) => Ok(self.params.get(m.gate_for(task_id)?.weight)),
            FfnParams::Dense(_) => Err(Error::Task("dense layers have no gate".into())),
        }
    }

    pub fn cast<G: Real>(&self) -> MtlModel<G> {
        MtlModel {
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            heads: self.heads.clone(),
            registry: self.registry.clone(),
            vocab: self.vocab.clone(),
        }
    }

    /// Returns a model with `spec` appended as a new task. Existing
    /// parameters are copied unchanged; the new head is freshly initialised
    /// and, for per-task gating, the new gate follows `gate`.
    pub fn add_task<R: Rng + ?Sized>(&self, spec: TaskSpec, gate: GateInit, rng: &mut R) -> Result<Self> {
        let mut tasks = self.registry.tasks().to_vec();
        let new_id = tasks.len();
        tasks.push(spec);
        let registry = TaskRegistry::new(tasks)?;
        let config = EncoderConfig {
            num_tasks: registry.len(),
            ..self.config().clone()
        };
        if let GateInit::CopyFrom(src) = gate {
            if src >= new_id {
                return Err(Error::Task(format!(
                    "gate source task id {src} out of range 0..{new_id}"
                )));
            }
        }
        let old = &self.params;
        let mut source = |name: &str, shape: &[usize], kind: ParamKind| -> Result<Tensor<F>> {
            if let Some(id) = old.find(name) {
                return Ok(old.get(id).clone());
            }
            match (kind, gate) {
                (ParamKind::Gate, GateInit::CopyFrom(src)) => {
                    let layer = name.split('.').nth(1).unwrap_or_default();
                    old.by_name(&format!("layers.{layer}.gates.{src}.weight")).cloned()
                }
                _ => Ok(init_param(rng, shape, kind)),
            }
        };
        let mut model = Self::build(&config, &registry, &mut source)?;
        model.vocab = self.vocab.clone();
        Ok(model)
    }
}

/// Randomly initialised model: weights `N(0, 0.02)`, gates `N(0, 0.001)`,
/// biases zero and normalisation gains one.
pub fn fresh_init<F: Real, R: Rng + ?Sized>(
    config: &EncoderConfig,
    registry: &TaskRegistry,
    rng: &mut R,
) -> Result<MtlModel<F>> {
    MtlModel::build(config, registry, &mut |_, shape, kind| Ok(init_param(rng, shape, kind)))
}

/// MoE model whose experts all start as copies of the dense FFN in the
/// same layer. Every other encoder parameter is copied; heads are copied
/// for tasks the dense model knows (matched by name) and gates are random.
pub fn init_from_dense<F: Real, R: Rng + ?Sized>(
    dense: DenseCheckpointView<'_, F>,
    config: &EncoderConfig,
    registry: &TaskRegistry,
    rng: &mut R,
) -> Result<MtlModel<F>> {
    if dense.config.variant != Variant::Dense {
        return Err(Error::Checkpoint(format!(
            "expected a dense checkpoint, found variant {}",
            dense.config.variant.as_str()
        )));
    }
    let c = dense.config;
    let same_body = c.num_layers == config.num_layers
        && c.hidden == config.hidden
        && c.ffn_inner == config.ffn_inner
        && c.num_heads == config.num_heads
        && c.max_seq_len == config.max_seq_len
        && c.vocab_size == config.vocab_size;
    if !same_body {
        return Err(Error::Checkpoint(
            "dense checkpoint dimensions differ from the target configuration".into(),
        ));
    }
    let head_source: Vec<Option<usize>> = registry.tasks().iter().map(|t| dense.registry.id_of(&t.name)).collect();
    let mut source = |name: &str, shape: &[usize], kind: ParamKind| -> Result<Tensor<F>> {
        let parts: Vec<&str> = name.split('.').collect();
        match (kind, parts.as_slice()) {
            (ParamKind::Gate, _) => Ok(init_param(rng, shape, kind)),
            (ParamKind::HeadWeight | ParamKind::HeadBias, ["heads", t, leaf]) => {
                let t: usize = t
                    .parse()
                    .map_err(|_| Error::Consistency(format!("bad head name `{name}`")))?;
                match head_source[t].and_then(|s| dense.params.find(&format!("heads.{s}.{leaf}"))) {
                    Some(id) if dense.params.get(id).shape() == shape => Ok(dense.params.get(id).clone()),
                    _ => Ok(init_param(rng, shape, kind)),
                }
            }
            (_, ["layers", l, "experts", _, leaf]) => dense.params.by_name(&format!("layers.{l}.ffn.{leaf}")).cloned(),
            _ => dense.params.by_name(name).cloned(),
        }
    };
    let model = MtlModel::build(config, registry, &mut source)?;
    Ok(match dense.vocab {
        Some(v) => model.with_vocab(v.clone()),
        None => model,
    })
}
