use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::MtlModel;
use crate::error::{Error, Result};
use crate::numerics::{adam_step, clip_grad_norm, lr_at, AdamState, Graph, LrSchedule, NodeId};
use crate::tasks::{
    classification_loss, metric_accuracy, metric_mcc, metric_spearman, regression_loss, MetricKind, TaskSpec,
};
use crate::trainer::batch::{build_super_batch, make_sub_batch, sample_tasks, EncodedExample, EncodedTask, SubBatch};
use crate::trainer::{MetricsRecord, TaskMetric, TrainConfig};

/// Examples per forward pass during evaluation.
pub const EVAL_BATCH: usize = 64;

/// Scaled task loss of one sub-batch.
pub fn sub_batch_loss<R: Rng + ?Sized>(
    g: &mut Graph<f32>,
    model: &MtlModel<f32>,
    sb: &SubBatch,
    training: bool,
    rng: &mut R,
) -> Result<NodeId> {
    let (_, out) = model.forward_head(g, &sb.tokens, sb.task_id, training, rng)?;
    if model.head(sb.task_id)?.regression {
        let targets: Vec<f64> = sb
            .labels
            .iter()
            .map(|l| {
                l.score()
                    .ok_or_else(|| Error::Data("regression task with a class label".into()))
            })
            .collect::<Result<_>>()?;
        regression_loss(g, out, &targets)
    } else {
        let labels: Vec<usize> = sb
            .labels
            .iter()
            .map(|l| {
                l.class()
                    .ok_or_else(|| Error::Data("classification task with a score label".into()))
            })
            .collect::<Result<_>>()?;
        classification_loss(g, out, &labels)
    }
}

/// Outcome of one optimiser update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// `(task id, scaled loss)` per sub-batch, in order.
    pub losses: Vec<(usize, f64)>,
    pub total_loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub lr: f64,
}

/// Sums the sub-batch losses, back-propagates once, clips the global
/// norm and applies one Adam update at `lr_at(schedule, step)`.
#[allow(clippy::too_many_arguments)]
pub fn mtl_train_step<R: Rng + ?Sized>(
    model: &mut MtlModel<f32>,
    super_batch: &[SubBatch],
    optimizer: &mut AdamState<f32>,
    schedule: &LrSchedule,
    step: u64,
    grad_clip_max: f64,
    rng: &mut R,
) -> Result<StepReport> {
    if super_batch.is_empty() {
        return Err(Error::Training("empty super-batch".into()));
    }
    let mut g = Graph::new();
    let mut parts = Vec::with_capacity(super_batch.len());
    let mut losses = Vec::with_capacity(super_batch.len());
    for sb in super_batch {
        let l = sub_batch_loss(&mut g, model, sb, true, rng)?;
        losses.push((sb.task_id, g.value(l).item() as f64));
        parts.push(l);
    }
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = g.add(total, p)?;
    }
    let total_loss = g.value(total).item() as f64;
    if !total_loss.is_finite() {
        let detail: Vec<String> = losses.iter().map(|(t, l)| format!("task {t}: {l}")).collect();
        return Err(Error::Training(format!(
            "non-finite loss at step {step} ({})",
            detail.join(", ")
        )));
    }
    let mut grads = g.backward(total)?.for_params(&g, &model.params);
    let grad_norm = clip_grad_norm(&mut grads, grad_clip_max);
    if !grad_norm.is_finite() {
        return Err(Error::Training(format!("non-finite gradient norm at step {step}")));
    }
    let lr = lr_at(schedule, step);
    adam_step(&mut model.params, &grads, optimizer, lr)?;
    Ok(StepReport {
        losses,
        total_loss,
        grad_norm,
        lr,
    })
}

/// Dev-set predictions of one task.
#[derive(Clone, Debug, PartialEq)]
pub enum Predictions {
    Classes(Vec<usize>),
    Scores(Vec<f64>),
}

pub fn predict(model: &MtlModel<f32>, task_id: usize, examples: &[EncodedExample]) -> Result<Predictions> {
    let regression = model.head(task_id)?.regression;
    let mut classes = Vec::new();
    let mut scores = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for chunk in examples.chunks(EVAL_BATCH) {
        let refs: Vec<&EncodedExample> = chunk.iter().collect();
        let sb = make_sub_batch(task_id, &refs)?;
        let mut g = Graph::new();
        let (_, out) = model.forward_head(&mut g, &sb.tokens, task_id, false, &mut rng)?;
        let out = g.value(out);
        for r in 0..out.rows() {
            let row = out.row(r);
            if regression {
                scores.push(row[0] as f64);
            } else {
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                classes.push(best);
            }
        }
    }
    Ok(if regression {
        Predictions::Scores(scores)
    } else {
        Predictions::Classes(classes)
    })
}

/// The task's dev metric with dropout disabled.
pub fn evaluate(model: &MtlModel<f32>, task_id: usize, examples: &[EncodedExample]) -> Result<f64> {
    let spec = model.registry.get(task_id)?;
    score_predictions(spec, &predict(model, task_id, examples)?, examples)
}

pub fn score_predictions(spec: &TaskSpec, predictions: &Predictions, examples: &[EncodedExample]) -> Result<f64> {
    match predictions {
        Predictions::Scores(s) => {
            let refs: Vec<f64> = examples.iter().filter_map(|e| e.label.score()).collect();
            metric_spearman(s, &refs)
        }
        Predictions::Classes(p) => {
            let refs: Vec<usize> = examples.iter().filter_map(|e| e.label.class()).collect();
            match spec.metric {
                MetricKind::Mcc => metric_mcc(p, &refs),
                MetricKind::Accuracy => metric_accuracy(p, &refs),
                MetricKind::Spearman => Err(Error::Task(format!("task `{}` pairs spearman with classes", spec.name))),
            }
        }
    }
}

/// Evaluates every task on its dev split.
pub fn evaluate_all(
    model: &MtlModel<f32>,
    tasks: &[EncodedTask],
    step: usize,
    train_loss: &[Option<f64>],
) -> Result<MetricsRecord> {
    let mut metrics = Vec::with_capacity(tasks.len());
    for (t, task) in tasks.iter().enumerate() {
        metrics.push(TaskMetric {
            task: task.spec.name.clone(),
            metric: task.spec.metric,
            value: evaluate(model, t, &task.dev)?,
            train_loss: train_loss.get(t).copied().flatten(),
        });
    }
    let specs: Vec<&TaskSpec> = tasks.iter().map(|t| &t.spec).collect();
    Ok(MetricsRecord::new(step, metrics, &specs))
}

fn check_alignment(model: &MtlModel<f32>, tasks: &[EncodedTask]) -> Result<()> {
    let names = model.registry.names();
    let given: Vec<&str> = tasks.iter().map(|t| t.spec.name.as_str()).collect();
    if names != given {
        return Err(Error::Config(format!(
            "model tasks {names:?} do not match data tasks {given:?}"
        )));
    }
    Ok(())
}

pub struct TrainOutcome {
    pub model: MtlModel<f32>,
    pub optimizer: AdamState<f32>,
    /// One record per `eval_interval` steps.
    pub history: Vec<MetricsRecord>,
}

/// Stage-one joint training for a fixed number of steps; the final model
/// is returned.
pub fn mtl_train(mut model: MtlModel<f32>, tasks: &[EncodedTask], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    check_alignment(&model, tasks)?;
    model.encoder.config.dropout_p = config.dropout_p;
    let schedule = LrSchedule::with_warmup_fraction(config.peak_lr, config.warmup_fraction, config.total_steps as u64)?;
    let mut optimizer = AdamState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = Vec::new();
    let mut loss_sum = vec![0.0; tasks.len()];
    let mut loss_count = vec![0usize; tasks.len()];
    for step in 0..config.total_steps {
        let ids = sample_tasks(&model.registry, config.sampling, config.subbatches, &mut rng)?;
        let sb = build_super_batch(&ids, tasks, config.batch_size, &mut rng)?;
        let report = mtl_train_step(
            &mut model,
            &sb,
            &mut optimizer,
            &schedule,
            step as u64,
            config.grad_clip_max,
            &mut rng,
        )?;
        for (t, l) in report.losses {
            loss_sum[t] += l;
            loss_count[t] += 1;
        }
        if (step + 1) % config.eval_interval == 0 {
            let means: Vec<Option<f64>> = loss_sum
                .iter()
                .zip(&loss_count)
                .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
                .collect();
            history.push(evaluate_all(&model, tasks, step + 1, &means)?);
            loss_sum.iter_mut().for_each(|v| *v = 0.0);
            loss_count.iter_mut().for_each(|v| *v = 0);
        }
    }
    Ok(TrainOutcome {
        model,
        optimizer,
        history,
    })
}
