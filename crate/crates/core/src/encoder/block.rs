use rand::Rng;

use crate::encoder::moe::{expert_forward, moe_layer_forward, Dispatch, RoutingDecision};
use crate::encoder::{BlockParams, Encoder, FfnParams, LinearParams, NormParams};
use crate::error::{Error, Result};
use crate::numerics::{AttentionShape, Graph, NodeId, ParamSet, Real, LAYER_NORM_EPS};

/// A padded batch of token sequences, stored row-major as `[batch × seq]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub ids: Vec<usize>,
    /// `false` marks padding.
    pub mask: Vec<bool>,
    pub batch: usize,
    pub seq: usize,
}

impl TokenBatch {
    pub fn new(ids: Vec<usize>, mask: Vec<bool>, batch: usize, seq: usize) -> Result<Self> {
        if ids.len() != batch * seq || mask.len() != ids.len() {
            return Err(Error::Input(format!(
                "{} ids and {} mask entries for a {batch}×{seq} batch",
                ids.len(),
                mask.len()
            )));
        }
        Ok(Self { ids, mask, batch, seq })
    }

    /// A single unpadded sequence.
    pub fn single(ids: Vec<usize>) -> Self {
        let seq = ids.len();
        Self {
            mask: vec![true; seq],
            ids,
            batch: 1,
            seq,
        }
    }

    pub fn real_tokens(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Routing decisions of one forward pass, restricted to non-padding tokens.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoutingTrace {
    pub task_id: usize,
    /// `layers[l]` holds one decision per real token, in row order.
    pub layers: Vec<Vec<RoutingDecision>>,
}

impl RoutingTrace {
    pub fn len(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct EncoderOutput {
    /// `[batch·seq × H]`
    pub sequence: NodeId,
    /// First-position hidden state of each sequence, `[batch × H]`.
    pub pooled: NodeId,
    pub trace: RoutingTrace,
    /// Total single-token expert evaluations over all MoE layers.
    pub expert_evaluations: usize,
}

fn linear<F: Real>(g: &mut Graph<F>, params: &ParamSet<F>, p: &LinearParams, x: NodeId) -> Result<NodeId> {
    let w = g.param(params, p.weight);
    let b = g.param(params, p.bias);
    g.linear(x, w, Some(b))
}

fn norm<F: Real>(g: &mut Graph<F>, params: &ParamSet<F>, p: &NormParams, x: NodeId) -> Result<NodeId> {
    let gain = g.param(params, p.gain);
    let bias = g.param(params, p.bias);
    g.layer_norm(x, gain, bias, F::lit(LAYER_NORM_EPS))
}

/// Routing decisions of one MoE block and its expert evaluation count.
pub type BlockRouting = (Vec<RoutingDecision>, usize);

/// Post-norm block: `x' = LN(x + Drop(Attn(x)))`, `out = LN(x' + Drop(FFN(x')))`.
///
/// Returns the block output and, for MoE blocks, the routing decisions of
/// every row together with the number of expert evaluations.
#[allow(clippy::too_many_arguments)]
pub fn transformer_block_forward<F: Real, R: Rng + ?Sized>(
    g: &mut Graph<F>,
    params: &ParamSet<F>,
    block: &BlockParams,
    x: NodeId,
    batch: &TokenBatch,
    num_heads: usize,
    task_id: usize,
    dropout_p: f64,
    training: bool,
    rng: &mut R,
) -> Result<(NodeId, Option<BlockRouting>)> {
    let a = &block.attention;
    let q = linear(g, params, &a.query, x)?;
    let k = linear(g, params, &a.key, x)?;
    let v = linear(g, params, &a.value, x)?;
    let shape = AttentionShape {
        batch: batch.batch,
        seq: batch.seq,
        heads: num_heads,
    };
    let ctx = g.attention(q, k, v, shape, &batch.mask)?;
    let attn = linear(g, params, &a.output, ctx)?;
    let attn = g.dropout(attn, dropout_p, training, rng);
    let res = g.add(x, attn)?;
    let hidden = norm(g, params, &block.attention_norm, res)?;

    let (ffn, routing) = match &block.ffn {
        FfnParams::Dense(e) => (expert_forward(g, params, e, hidden)?, None),
        FfnParams::Sparse(layer) => {
            let out = moe_layer_forward(g, params, layer, hidden, task_id, Dispatch::Top1)?;
            (out.output, Some((out.decisions, out.expert_evaluations)))
        }
    };
    let ffn = g.dropout(ffn, dropout_p, training, rng);
    let res = g.add(hidden, ffn)?;
    Ok((norm(g, params, &block.ffn_norm, res)?, routing))
}

/// Embeds `batch`, runs every block and pools the first position of each
/// sequence.
pub fn encoder_forward<F: Real, R: Rng + ?Sized>(
    g: &mut Graph<F>,
    params: &ParamSet<F>,
    encoder: &Encoder,
    batch: &TokenBatch,
    task_id: usize,
    training: bool,
    rng: &mut R,
) -> Result<EncoderOutput> {
    let cfg = &encoder.config;
    if batch.ids.len() != batch.batch * batch.seq || batch.mask.len() != batch.ids.len() {
        return Err(Error::Input("token batch is inconsistent".into()));
    }
    if batch.seq == 0 || batch.seq > cfg.max_seq_len {
        return Err(Error::Input(format!(
            "sequence length {} outside 1..={}",
            batch.seq, cfg.max_seq_len
        )));
    }
    if let Some(&bad) = batch.ids.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(Error::Input(format!("token id {bad} >= vocab size {}", cfg.vocab_size)));
    }
    if cfg.variant == crate::encoder::Variant::TaskGate && task_id >= cfg.num_tasks {
        return Err(Error::Task(format!(
            "task id {task_id} out of range 0..{}",
            cfg.num_tasks
        )));
    }

    let tok_table = g.param(params, encoder.token_embedding);
    let pos_table = g.param(params, encoder.position_embedding);
    let tokens = g.gather_rows(tok_table, &batch.ids)?;
    let positions: Vec<usize> = (0..batch.batch).flat_map(|_| 0..batch.seq).collect();
    let pos = g.gather_rows(pos_table, &positions)?;
    let mut x = g.add(tokens, pos)?;

    let mut trace = RoutingTrace {
        task_id,
        layers: Vec::new(),
    };
    let mut expert_evaluations = 0;
    for block in &encoder.blocks {
        let (out, routing) = transformer_block_forward(
            g,
            params,
            block,
            x,
            batch,
            cfg.num_heads,
            task_id,
            cfg.dropout_p,
            training,
            rng,
        )?;
        if let Some((decisions, evals)) = routing {
            expert_evaluations += evals;
            trace.layers.push(
                decisions
                    .into_iter()
                    .zip(&batch.mask)
                    .filter_map(|(d, &real)| real.then_some(d))
                    .collect(),
            );
        }
        x = out;
    }
    let first: Vec<usize> = (0..batch.batch).map(|b| b * batch.seq).collect();
    let pooled = g.gather_rows(x, &first)?;
    Ok(EncoderOutput {
        sequence: x,
        pooled,
        trace,
        expert_evaluations,
    })
}
