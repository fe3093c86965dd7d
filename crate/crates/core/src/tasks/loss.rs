use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, Real, Tensor};

/// Mean cross-entropy of `logits: [B×C]` against `labels`, divided by
/// `ln C` so that a uniform predictor scores exactly 1 for every class count.
pub fn classification_loss<F: Real>(g: &mut Graph<F>, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    let (rows, classes) = (g.value(logits).rows(), g.value(logits).cols());
    if classes < 2 {
        return Err(Error::Data(format!(
            "classification needs at least 2 classes, got {classes}"
        )));
    }
    if labels.len() != rows {
        return Err(Error::Data(format!("{} labels for {rows} predictions", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Data(format!("label {bad} outside 0..{classes}")));
    }
    let log_probs = g.log_softmax(logits);
    let picked = g.pick_per_row(log_probs, labels)?;
    let mean = g.mean(picked);
    Ok(g.scale(mean, F::lit(-1.0 / (classes as f64).ln())))
}

/// Scaled cross-entropy evaluated directly on probability rows.
pub fn scaled_cross_entropy(probs: &Tensor<f64>, labels: &[usize]) -> Result<f64> {
    let classes = probs.cols();
    if labels.len() != probs.rows() || classes < 2 {
        return Err(Error::Data("labels do not match the probability rows".into()));
    }
    let mut total = 0.0;
    for (r, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Data(format!("label {l} outside 0..{classes}")));
        }
        total -= probs.at(r, l).ln();
    }
    Ok(total / labels.len() as f64 / (classes as f64).ln())
}

/// Mean squared error between `scores: [B×1]` and `targets`.
pub fn regression_loss<F: Real>(g: &mut Graph<F>, scores: NodeId, targets: &[f64]) -> Result<NodeId> {
    let n = g.value(scores).len();
    if targets.len() != n {
        return Err(Error::Data(format!("{} targets for {n} scores", targets.len())));
    }
    let shape = g.value(scores).shape().to_vec();
    let t = g.constant(Tensor::from_f64(&shape, targets)?);
    let diff = g.sub(scores, t)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.mean(sq))
}
