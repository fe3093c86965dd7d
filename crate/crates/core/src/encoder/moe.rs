use crate::encoder::{ExpertParams, GateParams, MoeParams};
use crate::error::{Error, Result};
use crate::numerics::{kernels, Graph, NodeId, ParamSet, Real, Tensor};

/// Routing outcome for one token.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingDecision {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub expert_index: usize,
    /// Probability of the selected expert, used unnormalised as its weight.
    pub gate_value: f64,
}

/// `w_out · GeLU(w_in · x + b_in) + b_out`, applied row-wise to `x: [S×H]`.
pub fn expert_forward<F: Real>(
    g: &mut Graph<F>,
    params: &ParamSet<F>,
    expert: &ExpertParams,
    x: NodeId,
) -> Result<NodeId> {
    let w_in = g.param(params, expert.w_in);
    let b_in = g.param(params, expert.b_in);
    let w_out = g.param(params, expert.w_out);
    let b_out = g.param(params, expert.b_out);
    let inner = g.linear(x, w_in, Some(b_in))?;
    let act = g.gelu(inner);
    g.linear(act, w_out, Some(b_out))
}

/// Routing logits `x · W_gᵀ`, shaped `[S×N]`.
pub fn gate_logits<F: Real>(g: &mut Graph<F>, params: &ParamSet<F>, gate: &GateParams, x: NodeId) -> Result<NodeId> {
    let w = g.param(params, gate.weight);
    g.linear(x, w, None)
}

/// Top-1 routing over each row of `logits`. Ties go to the lowest index.
pub fn route_top1<F: Real>(logits: &Tensor<F>) -> Vec<RoutingDecision> {
    let n = logits.cols();
    let mut probs = vec![F::zero(); n];
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            kernels::softmax_row(row, &mut probs);
            let mut best = 0;
            for (i, &p) in probs.iter().enumerate() {
                if p > probs[best] {
                    best = i;
                }
            }
            RoutingDecision {
                logits: row.iter().map(|v| v.as_f64()).collect(),
                probs: probs.iter().map(|v| v.as_f64()).collect(),
                expert_index: best,
                gate_value: probs[best].as_f64(),
            }
        })
        .collect()
}

/// How tokens are assigned to experts.
#[derive(Clone, Copy, Debug)]
pub enum Dispatch<'a> {
    /// Highest-probability expert per token.
    Top1,
    /// Use the given expert per token while still weighting by the top-1
    /// gate value. Only meaningful for diagnostics.
    Forced(&'a [usize]),
}

pub struct MoeOutput {
    /// `g* · E*(x)` per token, `[S×H]`.
    pub output: NodeId,
    /// Selected expert outputs before gate scaling.
    pub expert_output: NodeId,
    pub decisions: Vec<RoutingDecision>,
    /// Number of single-token expert FFN evaluations performed.
    pub expert_evaluations: usize,
}

/// Sparse MoE layer: every token is processed by exactly one expert and
/// the result is scaled by that expert's gate probability. Gradients flow
/// into the gate through the scaling factor.
pub fn moe_layer_forward<F: Real>(
    g: &mut Graph<F>,
    params: &ParamSet<F>,
    layer: &MoeParams,
    x: NodeId,
    task_id: usize,
    dispatch: Dispatch<'_>,
) -> Result<MoeOutput> {
    let gate = layer.gate_for(task_id)?;
    let logits = gate_logits(g, params, &gate, x)?;
    let decisions = route_top1(g.value(logits));
    let n = layer.experts.len();
    if g.value(logits).cols() != n {
        return Err(Error::dim(
            "moe_layer_forward",
            format!("gate has {} outputs for {n} experts", g.value(logits).cols()),
        ));
    }
    let chosen: Vec<usize> = match dispatch {
        Dispatch::Top1 => decisions.iter().map(|d| d.expert_index).collect(),
        Dispatch::Forced(choice) => {
            if choice.len() != decisions.len() || choice.iter().any(|&e| e >= n) {
                return Err(Error::dim("moe_layer_forward", "forced dispatch does not match tokens"));
            }
            choice.to_vec()
        }
    };
    let top1: Vec<usize> = decisions.iter().map(|d| d.expert_index).collect();
    let probs = g.softmax(logits);
    let gate_value = g.pick_per_row(probs, &top1)?;

    let rows = g.value(x).rows();
    let cols = g.value(x).cols();
    let mut parts = Vec::new();
    let mut evaluations = 0;
    for (e, expert) in layer.experts.iter().enumerate() {
        let tokens: Vec<usize> = (0..rows).filter(|&r| chosen[r] == e).collect();
        if tokens.is_empty() {
            continue;
        }
        evaluations += tokens.len();
        let routed = g.gather_rows(x, &tokens)?;
        let out = expert_forward(g, params, expert, routed)?;
        parts.push((out, tokens));
    }
    let expert_output = g.assemble_rows(parts, rows, cols)?;
    let output = g.row_scale(expert_output, gate_value)?;
    Ok(MoeOutput {
        output,
        expert_output,
        decisions,
        expert_evaluations: evaluations,
    })
}
