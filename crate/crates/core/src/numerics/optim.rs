use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Real, Tensor};

/// Bias-corrected Adam moments for every tensor of a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
}

impl<F: Real> AdamState<F> {
    /// Zero moments with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new(params: &ParamSet<F>) -> Self {
        Self::with_betas(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &ParamSet<F>, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros = |t: &Tensor<F>| Tensor::zeros(t.shape());
        Self {
            step: 0,
            beta1,
            beta2,
            epsilon,
            m: params.tensors().iter().map(zeros).collect(),
            v: params.tensors().iter().map(zeros).collect(),
        }
    }
}

/// One Adam update. Parameters whose gradient is `None` are skipped
/// entirely (their moments are left untouched).
pub fn adam_step<F: Real>(
    params: &mut ParamSet<F>,
    grads: &[Option<Tensor<F>>],
    state: &mut AdamState<F>,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::dim(
            "adam_step",
            format!(
                "{} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, g) in grads.iter().enumerate() {
        if let Some(g) = g {
            let p = &params.tensors()[i];
            if g.shape() != p.shape() || state.m[i].shape() != p.shape() {
                return Err(Error::dim(
                    "adam_step",
                    format!(
                        "`{}`: grad {:?} vs param {:?}",
                        params.name(crate::numerics::ParamId(i)),
                        g.shape(),
                        p.shape()
                    ),
                ));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (F::lit(state.beta1), F::lit(state.beta2));
    let bias1 = F::lit(1.0 - state.beta1.powi(t));
    let bias2 = F::lit(1.0 - state.beta2.powi(t));
    let (lr, eps) = (F::lit(lr), F::lit(state.epsilon));
    let one = F::one();
    for (i, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        let p = params.tensors_mut()[i].data_mut();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for j in 0..p.len() {
            let gj = g.data()[j];
            m[j] = b1 * m[j] + (one - b1) * gj;
            v[j] = b2 * v[j] + (one - b2) * gj * gj;
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Linear warm-up from 0 to `peak_lr`, then linear decay to 0 at `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(peak_lr: f64, warmup_steps: u64, total_steps: u64) -> Result<Self> {
        if warmup_steps > total_steps || peak_lr < 0.0 || !peak_lr.is_finite() {
            return Err(Error::Config(format!(
                "invalid schedule: peak {peak_lr}, warmup {warmup_steps}, total {total_steps}"
            )));
        }
        Ok(Self {
            peak_lr,
            warmup_steps,
            total_steps,
        })
    }

    /// Schedule with `warmup_fraction · total_steps` (rounded down) warm-up steps.
    pub fn with_warmup_fraction(peak_lr: f64, warmup_fraction: f64, total_steps: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&warmup_fraction) {
            return Err(Error::Config(format!(
                "warmup fraction {warmup_fraction} outside [0, 1]"
            )));
        }
        Self::new(peak_lr, (warmup_fraction * total_steps as f64) as u64, total_steps)
    }
}

pub fn lr_at(schedule: &LrSchedule, step: u64) -> f64 {
    let LrSchedule {
        peak_lr,
        warmup_steps,
        total_steps,
    } = *schedule;
    let step = step.min(total_steps);
    if warmup_steps > 0 && step <= warmup_steps {
        peak_lr * step as f64 / warmup_steps as f64
    } else if total_steps == warmup_steps {
        peak_lr
    } else {
        peak_lr * (total_steps - step) as f64 / (total_steps - warmup_steps) as f64
    }
}

/// Global L2 norm over every present gradient.
pub fn global_norm<F: Real>(grads: &[Option<Tensor<F>>]) -> f64 {
    grads.iter().flatten().map(Tensor::sum_squares).sum::<f64>().sqrt()
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm observed before clipping.
///
/// Norms within a relative 1e-6 of the bound are left alone, which makes
/// the operation idempotent under floating-point rounding.
pub fn clip_grad_norm<F: Real>(grads: &mut [Option<Tensor<F>>], max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = global_norm(grads);
    if norm > max_norm * (1.0 + 1e-6) {
        let factor = F::lit(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }
    norm
}
