use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::encoder::TokenBatch;
use crate::error::{Error, Result};
use crate::tasks::{encode, vocab::PAD, Dataset, Label, Mixture, TaskRegistry, TaskSpec, Vocab};
use crate::trainer::Sampling;

/// One example as unpadded token ids.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedExample {
    pub ids: Vec<usize>,
    pub label: Label,
}

/// A task with its splits already tokenised.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedTask {
    pub spec: TaskSpec,
    pub train: Vec<EncodedExample>,
    pub dev: Vec<EncodedExample>,
}

pub fn encode_dataset(spec: &TaskSpec, data: &Dataset, vocab: &Vocab, max_len: usize) -> Vec<EncodedExample> {
    data.examples
        .iter()
        .map(|e| {
            let enc = encode(spec, &e.text_a, e.text_b.as_deref(), vocab, max_len);
            let n = enc.real_len();
            EncodedExample {
                ids: enc.ids[..n].to_vec(),
                label: e.label,
            }
        })
        .collect()
}

pub fn encode_mixture(mixture: &Mixture, vocab: &Vocab, max_len: usize) -> Vec<EncodedTask> {
    mixture
        .tasks
        .iter()
        .map(|t| EncodedTask {
            spec: t.spec.clone(),
            train: encode_dataset(&t.spec, &t.train, vocab, max_len),
            dev: encode_dataset(&t.spec, &t.dev, vocab, max_len),
        })
        .collect()
}

/// Draws `k` task ids independently.
pub fn sample_tasks<R: Rng + ?Sized>(
    registry: &TaskRegistry,
    policy: Sampling,
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if registry.is_empty() {
        return Err(Error::Config("cannot sample from an empty registry".into()));
    }
    Ok(match policy {
        Sampling::Uniform => (0..k).map(|_| rng.random_range(0..registry.len())).collect(),
        Sampling::Natural => {
            let dist = WeightedIndex::new(registry.tasks().iter().map(|t| t.dataset_size))
                .map_err(|e| Error::Config(format!("natural sampling needs positive sizes: {e}")))?;
            (0..k).map(|_| dist.sample(rng)).collect()
        }
    })
}

/// Task-homogeneous group of examples.
#[derive(Clone, Debug, PartialEq)]
pub struct SubBatch {
    pub task_id: usize,
    pub tokens: TokenBatch,
    pub labels: Vec<Label>,
}

/// Pads `examples` to their longest member.
pub fn make_sub_batch(task_id: usize, examples: &[&EncodedExample]) -> Result<SubBatch> {
    let seq = examples.iter().map(|e| e.ids.len()).max().unwrap_or(0);
    if seq == 0 {
        return Err(Error::Data("sub-batch has no tokens".into()));
    }
    let mut ids = Vec::with_capacity(examples.len() * seq);
    let mut mask = Vec::with_capacity(examples.len() * seq);
    for e in examples {
        ids.extend(&e.ids);
        mask.extend(std::iter::repeat_n(true, e.ids.len()));
        ids.extend(std::iter::repeat_n(PAD, seq - e.ids.len()));
        mask.extend(std::iter::repeat_n(false, seq - e.ids.len()));
    }
    Ok(SubBatch {
        task_id,
        tokens: TokenBatch::new(ids, mask, examples.len(), seq)?,
        labels: examples.iter().map(|e| e.label).collect(),
    })
}

/// One sub-batch per entry of `task_ids`, each sampled with replacement
/// from that task's training split.
pub fn build_super_batch<R: Rng + ?Sized>(
    task_ids: &[usize],
    tasks: &[EncodedTask],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<SubBatch>> {
    task_ids
        .iter()
        .map(|&t| {
            let task = tasks
                .get(t)
                .ok_or_else(|| Error::Task(format!("task id {t} out of range 0..{}", tasks.len())))?;
            if task.train.is_empty() {
                return Err(Error::Data(format!(
                    "task `{}` has no training examples",
                    task.spec.name
                )));
            }
            let picked: Vec<&EncodedExample> = (0..batch_size)
                .map(|_| &task.train[rng.random_range(0..task.train.len())])
                .collect();
            make_sub_batch(t, &picked)
        })
        .collect()
}
