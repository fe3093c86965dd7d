use crate::encoder::{EncoderConfig, MtlModel, Variant};
use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor};
use crate::tasks::TaskRegistry;

/// Parameter counts by role, from the closed-form expressions and
/// cross-checked against the instantiated tensors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCountReport {
    /// One expert FFN: `2·H·F + F + H`.
    pub per_expert: u64,
    /// `L·N·per_expert` (`L·per_expert` for the dense variant).
    pub expert_params: u64,
    /// Experts beyond the first per layer: `L·(N-1)·per_expert`.
    pub additional_expert_params: u64,
    /// `L·N·H·gates`, where gates is `T` for per-task gating and 1 for a
    /// shared gate.
    pub gating_params: u64,
    pub attention_params: u64,
    pub norm_params: u64,
    pub embedding_params: u64,
    pub head_params: u64,
    pub total: u64,
}

impl ParamCountReport {
    /// Everything except experts and gates.
    pub fn attention_and_embedding_params(&self) -> u64 {
        self.attention_params + self.norm_params + self.embedding_params
    }
}

fn closed_form(config: &EncoderConfig, registry: &TaskRegistry) -> ParamCountReport {
    let [l, h, f, v, s] = [
        config.num_layers,
        config.hidden,
        config.ffn_inner,
        config.vocab_size,
        config.max_seq_len,
    ]
    .map(|x| x as u64);
    let n = config.experts() as u64;
    let per_expert = 2 * h * f + f + h;
    let gating_params = match config.variant {
        Variant::Dense => 0,
        Variant::SharedGate => l * n * h,
        Variant::TaskGate => l * n * h * config.num_tasks as u64,
    };
    let head_params = registry.tasks().iter().map(|t| t.head_outputs() as u64 * (h + 1)).sum();
    let mut r = ParamCountReport {
        per_expert,
        expert_params: l * n * per_expert,
        additional_expert_params: l * (n - 1) * per_expert,
        gating_params,
        attention_params: l * 4 * (h * h + h),
        norm_params: l * 4 * h,
        embedding_params: (v + s) * h,
        head_params,
        total: 0,
    };
    r.total =
        r.expert_params + r.gating_params + r.attention_params + r.norm_params + r.embedding_params + r.head_params;
    r
}

/// Sums tensor sizes of `params` by role, judged from their names.
fn enumerate(params: &ParamSet<f32>) -> ParamCountReport {
    let mut r = ParamCountReport {
        per_expert: 0,
        expert_params: 0,
        additional_expert_params: 0,
        gating_params: 0,
        attention_params: 0,
        norm_params: 0,
        embedding_params: 0,
        head_params: 0,
        total: 0,
    };
    for (_, name, t) in params.iter() {
        let n = t.len() as u64;
        let parts: Vec<&str> = name.split('.').collect();
        let slot = match parts.as_slice() {
            ["embeddings", ..] => &mut r.embedding_params,
            ["heads", ..] => &mut r.head_params,
            ["layers", _, "attention", ..] => &mut r.attention_params,
            ["layers", _, "attention_norm" | "ffn_norm", ..] => &mut r.norm_params,
            ["layers", _, "ffn" | "experts", ..] => &mut r.expert_params,
            ["layers", _, "gates", ..] => &mut r.gating_params,
            _ => &mut r.total,
        };
        *slot += n;
    }
    r.total +=
        r.expert_params + r.gating_params + r.attention_params + r.norm_params + r.embedding_params + r.head_params;
    r
}

/// Closed-form counts for `config`, verified against an instantiated model
/// with the same layout.
pub fn count_params(config: &EncoderConfig, registry: &TaskRegistry) -> Result<ParamCountReport> {
    let model = MtlModel::<f32>::build(config, registry, &mut |_, shape, _| Ok(Tensor::zeros(shape)))?;
    verify(closed_form(config, registry), &model.params)
}

/// Counts for an existing model, verified against its tensors.
pub fn count_model_params(model: &MtlModel<f32>) -> Result<ParamCountReport> {
    verify(closed_form(model.config(), &model.registry), &model.params)
}

fn verify(formula: ParamCountReport, params: &ParamSet<f32>) -> Result<ParamCountReport> {
    let seen = enumerate(params);
    let pairs = [
        ("expert", formula.expert_params, seen.expert_params),
        ("gating", formula.gating_params, seen.gating_params),
        ("attention", formula.attention_params, seen.attention_params),
        ("layer-norm", formula.norm_params, seen.norm_params),
        ("embedding", formula.embedding_params, seen.embedding_params),
        ("head", formula.head_params, seen.head_params),
        ("total", formula.total, seen.total),
    ];
    for (what, f, e) in pairs {
        if f != e {
            return Err(Error::Consistency(format!(
                "{what} parameters: formula gives {f}, tensors hold {e}"
            )));
        }
    }
    Ok(formula)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::TaskSpec;

    fn registry(t: usize) -> TaskRegistry {
        TaskRegistry::new(
            (0..t)
                .map(|i| TaskSpec::classification(&format!("t{i}"), 2, 10))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn per_expert_hand_count() {
        let mut cfg = EncoderConfig::tiny(Variant::TaskGate, 2, 1);
        cfg.hidden = 8;
        cfg.ffn_inner = 32;
        let r = count_params(&cfg, &registry(1)).unwrap();
        assert_eq!(r.per_expert, 8 * 32 + 32 + 32 * 8 + 8);
        assert_eq!(r.per_expert, 552);
    }

    #[test]
    fn dense_has_no_gates() {
        let cfg = EncoderConfig::tiny(Variant::Dense, 4, 3);
        let r = count_params(&cfg, &registry(3)).unwrap();
        assert_eq!(r.gating_params, 0);
        assert_eq!(r.expert_params, 2 * r.per_expert);
        assert_eq!(r.additional_expert_params, 0);
    }

    #[test]
    fn foreign_tensor_is_a_consistency_error() {
        let cfg = EncoderConfig::tiny(Variant::Dense, 1, 1);
        let mut m = MtlModel::<f32>::build(&cfg, &registry(1), &mut |_, s, _| Ok(Tensor::zeros(s))).unwrap();
        m.params.add("stray", Tensor::zeros(&[3]));
        assert!(matches!(count_model_params(&m), Err(Error::Consistency(_))));
    }
}
