use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{GateInit, MtlModel};
use crate::error::{Error, Result};
use crate::numerics::{AdamState, LrSchedule};
use crate::trainer::batch::{make_sub_batch, EncodedExample, EncodedTask};
use crate::trainer::train::{evaluate, mtl_train_step};
use crate::trainer::{FinetuneConfig, GateSource};

pub struct FinetuneOutcome {
    /// Model at the best dev epoch (epoch 0 is the untouched start).
    pub model: MtlModel<f32>,
    pub task_id: usize,
    pub best_metric: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// `(epoch, dev metric)`, starting with epoch 0.
    pub history: Vec<(usize, f64)>,
}

/// Prepares `model` for `task`: seen tasks keep their head and gate;
/// unseen ones get a fresh head and a gate initialised per `source`.
pub fn attach_task(
    model: &MtlModel<f32>,
    task: &EncodedTask,
    source: &GateSource,
    rng: &mut ChaCha8Rng,
) -> Result<(MtlModel<f32>, usize)> {
    if let Some(id) = model.registry.id_of(&task.spec.name) {
        let known = model.registry.get(id)?;
        if known.formulation != task.spec.formulation || known.num_classes != task.spec.num_classes {
            return Err(Error::Config(format!(
                "task `{}` differs from the checkpoint's definition",
                task.spec.name
            )));
        }
        return Ok((model.clone(), id));
    }
    let gate = match source {
        GateSource::Random => GateInit::Random,
        GateSource::Reuse(name) => GateInit::CopyFrom(model.registry.id_of(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown gate source `{name}`; available: {}, random",
                model.registry.names().join(", ")
            ))
        })?),
    };
    let extended = model.add_task(task.spec.clone(), gate, rng)?;
    let id = extended.num_tasks() - 1;
    Ok((extended, id))
}

/// Stage-two training on a single task with early stopping on dev.
///
/// The starting model counts as epoch 0 when choosing the best model, so
/// the result never scores below it. Patience counts epochs without
/// improvement over the best trained epoch so far.
pub fn finetune(model: &MtlModel<f32>, task: &EncodedTask, config: &FinetuneConfig) -> Result<FinetuneOutcome> {
    if config.batch_size == 0 || config.patience == 0 {
        return Err(Error::Config("batch_size and patience must be positive".into()));
    }
    if task.train.is_empty() || task.dev.is_empty() {
        return Err(Error::Data(format!(
            "task `{}` needs train and dev examples",
            task.spec.name
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut current, task_id) = attach_task(model, task, &config.gate_source, &mut rng)?;
    current.encoder.config.dropout_p = config.dropout_p;

    let start = evaluate(&current, task_id, &task.dev)?;
    let mut history = vec![(0, start)];
    let (mut best_model, mut best_metric, mut best_epoch) = (current.clone(), start, 0);

    let per_epoch = task.train.len().div_ceil(config.batch_size);
    let total = (per_epoch * config.max_epochs) as u64;
    let schedule = LrSchedule::with_warmup_fraction(config.peak_lr, config.warmup_fraction, total)?;
    let mut optimizer = AdamState::new(&current.params);
    let mut order: Vec<usize> = (0..task.train.len()).collect();
    let mut trained_best = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut step = 0u64;
    let mut epochs_run = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let refs: Vec<&EncodedExample> = chunk.iter().map(|&i| &task.train[i]).collect();
            let sb = make_sub_batch(task_id, &refs)?;
            mtl_train_step(
                &mut current,
                &[sb],
                &mut optimizer,
                &schedule,
                step,
                config.grad_clip_max,
                &mut rng,
            )?;
            step += 1;
        }
        epochs_run = epoch;
        let metric = evaluate(&current, task_id, &task.dev)?;
        history.push((epoch, metric));
        if metric > best_metric {
            best_metric = metric;
            best_epoch = epoch;
            best_model = current.clone();
        }
        if metric > trained_best {
            trained_best = metric;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(FinetuneOutcome {
        model: best_model,
        task_id,
        best_metric,
        best_epoch,
        epochs_run,
        history,
    })
}
