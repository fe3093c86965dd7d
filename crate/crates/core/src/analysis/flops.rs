use crate::encoder::EncoderConfig;

/// Multiply-accumulates of matrix products per token over all layers,
/// with attention costed at the full `max_seq_len` context.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PathMacs {
    /// Q/K/V/output projections plus score and context products.
    pub attention: u64,
    /// The FFN, or the single selected expert for top-1 routing.
    pub ffn: u64,
    /// Gate projection; zero for the dense model.
    pub gate: u64,
}

impl PathMacs {
    pub fn total(&self) -> u64 {
        self.attention + self.ffn + self.gate
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlopsReport {
    pub model: PathMacs,
    /// The same encoder with a dense FFN in every layer.
    pub dense_equivalent: PathMacs,
    /// Task head cost per example (applied to the pooled vector only).
    pub head_per_example: u64,
}

impl FlopsReport {
    /// Gate MACs as a fraction of FFN-path MACs.
    pub fn gate_fraction(&self) -> f64 {
        self.model.gate as f64 / self.model.ffn as f64
    }
}

/// Analytic per-token MAC counts. Element-wise work (softmax, layer norm,
/// GeLU) is excluded.
pub fn flops_per_token(config: &EncoderConfig, head_outputs: usize) -> FlopsReport {
    let [l, h, f, s] = [config.num_layers, config.hidden, config.ffn_inner, config.max_seq_len].map(|x| x as u64);
    let attention = l * (4 * h * h + 2 * s * h);
    let ffn = l * 2 * h * f;
    let gate = if config.variant.is_sparse() {
        l * config.num_experts as u64 * h
    } else {
        0
    };
    FlopsReport {
        model: PathMacs { attention, ffn, gate },
        dense_equivalent: PathMacs {
            attention,
            ffn,
            gate: 0,
        },
        head_per_example: head_outputs as u64 * h,
    }
}
