//! Seeded desk-scale experiments on synthetic mixtures, shared by the
//! examples and the acceptance suite.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{fresh_init, EncoderConfig, MtlModel, Variant};
use crate::error::Result;
use crate::tasks::{build_vocab, synth, Mixture, SynthWorld, Vocab};
use crate::trainer::{
    encode_mixture, finetune, mtl_train, EncodedTask, FinetuneConfig, GateSource, TrainConfig, TrainOutcome,
};

/// Model and optimisation settings small enough for a few seconds per run.
#[derive(Clone, Debug, PartialEq)]
pub struct DeskScale {
    pub num_layers: usize,
    pub hidden: usize,
    pub ffn_inner: usize,
    pub num_heads: usize,
    pub max_seq_len: usize,
    pub num_experts: usize,
    pub train: TrainConfig,
    pub finetune: FinetuneConfig,
}

impl Default for DeskScale {
    fn default() -> Self {
        Self {
            num_layers: 2,
            hidden: 16,
            ffn_inner: 32,
            num_heads: 2,
            max_seq_len: 24,
            num_experts: 4,
            train: TrainConfig {
                batch_size: 8,
                subbatches: 4,
                total_steps: 2000,
                peak_lr: 1e-3,
                eval_interval: 500,
                ..TrainConfig::default()
            },
            finetune: FinetuneConfig {
                max_epochs: 6,
                patience: 2,
                peak_lr: 1e-3,
                batch_size: 16,
                ..FinetuneConfig::default()
            },
        }
    }
}

impl DeskScale {
    pub fn encoder(&self, variant: Variant, vocab_size: usize, num_tasks: usize) -> EncoderConfig {
        EncoderConfig {
            num_layers: self.num_layers,
            hidden: self.hidden,
            ffn_inner: self.ffn_inner,
            num_heads: self.num_heads,
            max_seq_len: self.max_seq_len,
            vocab_size,
            variant,
            num_experts: if variant.is_sparse() { self.num_experts } else { 1 },
            num_tasks,
            dropout_p: self.train.dropout_p,
        }
    }
}

/// A generated synthetic world with its mixture, probes and vocabulary.
pub struct SyntheticSetup {
    pub world: SynthWorld,
    pub mixture: Mixture,
    pub probes: Mixture,
    pub vocab: Vocab,
}

impl SyntheticSetup {
    pub fn new(profile: &str, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let world = SynthWorld::new(synth::profile(profile)?, &mut rng)?;
        let mixture = world.mixture(&mut rng);
        let probes = world.probes(&mut rng);
        let vocab = build_vocab(&mixture.train_texts(), 10_000)?;
        Ok(Self {
            world,
            mixture,
            probes,
            vocab,
        })
    }

    /// The mixture restricted to the named tasks, in mixture order.
    pub fn subset(&self, names: &[&str]) -> Mixture {
        Mixture {
            tasks: self
                .mixture
                .tasks
                .iter()
                .filter(|t| names.contains(&t.spec.name.as_str()))
                .cloned()
                .collect(),
        }
    }

    pub fn encode(&self, mixture: &Mixture, max_len: usize) -> Vec<EncodedTask> {
        encode_mixture(mixture, &self.vocab, max_len)
    }
}

/// Freshly initialises and trains `variant` on `mixture`.
pub fn train_variant(
    setup: &SyntheticSetup,
    mixture: &Mixture,
    variant: Variant,
    desk: &DeskScale,
    seed: u64,
) -> Result<TrainOutcome> {
    let registry = mixture.registry()?;
    let cfg = desk.encoder(variant, setup.vocab.len(), registry.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let model: MtlModel<f32> = fresh_init(&cfg, &registry, &mut rng)?.with_vocab(setup.vocab.clone());
    let tasks = setup.encode(mixture, cfg.max_seq_len);
    mtl_train(
        model,
        &tasks,
        &TrainConfig {
            seed,
            ..desk.train.clone()
        },
    )
}

/// Best dev metric after fine-tuning `model` on `task` from `source`.
pub fn finetune_metric(
    model: &MtlModel<f32>,
    task: &EncodedTask,
    source: GateSource,
    desk: &DeskScale,
    seed: u64,
) -> Result<f64> {
    let cfg = FinetuneConfig {
        gate_source: source,
        seed,
        ..desk.finetune.clone()
    };
    Ok(finetune(model, task, &cfg)?.best_metric)
}

/// Median of `values` (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
