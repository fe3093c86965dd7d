//! Two-stage training: joint multi-task training over heterogeneous
//! super-batches, then per-task fine-tuning with optional gate re-use.

mod batch;
mod config;
mod finetune;
mod report;
mod train;

pub use batch::{
    build_super_batch, encode_dataset, encode_mixture, make_sub_batch, sample_tasks, EncodedExample, EncodedTask,
    SubBatch,
};
pub use config::{FinetuneConfig, GateSource, Sampling, TrainConfig};
pub use finetune::{attach_task, finetune, FinetuneOutcome};
pub use report::{metrics_csv, MetricsRecord, RunSummary, TaskMetric, METRICS_HEADER};
pub use train::{
    evaluate, evaluate_all, mtl_train, mtl_train_step, predict, score_predictions, sub_batch_loss, Predictions,
    StepReport, TrainOutcome, EVAL_BATCH,
};
