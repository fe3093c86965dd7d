use crate::encoder::ParamKind;
use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, ParamId, ParamSet, Real};
use crate::tasks::TaskSpec;

/// Output projection of one task: `U_t: [C_t×d]` for classification or
/// `V_t: [1×d]` for regression, plus a bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaskHead {
    pub weight: ParamId,
    pub bias: ParamId,
    pub outputs: usize,
    pub regression: bool,
}

impl TaskHead {
    pub(crate) fn build<F: Real>(
        b: &mut crate::encoder::Builder<'_, '_, F>,
        task_id: usize,
        spec: &TaskSpec,
        hidden: usize,
    ) -> Result<Self> {
        let outputs = spec.head_outputs();
        Ok(Self {
            weight: b.add(
                format!("heads.{task_id}.weight"),
                &[outputs, hidden],
                ParamKind::HeadWeight,
            )?,
            bias: b.add(format!("heads.{task_id}.bias"), &[outputs], ParamKind::HeadBias)?,
            outputs,
            regression: spec.formulation.is_regression(),
        })
    }
}

/// Unnormalised head outputs `pooled · Wᵀ + b`, shaped `[batch × outputs]`.
pub fn head_logits<F: Real>(g: &mut Graph<F>, params: &ParamSet<F>, head: &TaskHead, pooled: NodeId) -> Result<NodeId> {
    let w = g.param(params, head.weight);
    let b = g.param(params, head.bias);
    g.linear(pooled, w, Some(b))
}

/// Class probabilities `softmax(U_t · h + b)`.
pub fn classify<F: Real>(g: &mut Graph<F>, params: &ParamSet<F>, head: &TaskHead, pooled: NodeId) -> Result<NodeId> {
    if head.regression {
        return Err(Error::Task("classify called on a regression head".into()));
    }
    let logits = head_logits(g, params, head, pooled)?;
    Ok(g.softmax(logits))
}

/// Scores `V_t · h + b`, shaped `[batch × 1]`.
pub fn regress<F: Real>(g: &mut Graph<F>, params: &ParamSet<F>, head: &TaskHead, pooled: NodeId) -> Result<NodeId> {
    if !head.regression {
        return Err(Error::Task("regress called on a classification head".into()));
    }
    head_logits(g, params, head, pooled)
}
