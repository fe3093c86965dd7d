//! Task descriptions, text encoding, task heads, losses, metrics, data
//! files and synthetic task generators.

mod data;
mod heads;
mod loss;
mod metrics;
mod spec;
pub mod synth;
pub mod vocab;

pub use data::{
    load_dataset, load_mixture, parse_dataset, Dataset, Example, Label, ManifestTask, Mixture, MixtureManifest,
    TaskData, DATASET_HEADER,
};
pub use heads::{classify, head_logits, regress, TaskHead};
pub use loss::{classification_loss, regression_loss, scaled_cross_entropy};
pub use metrics::{average_ranks, metric_accuracy, metric_mcc, metric_spearman};
pub use spec::{Formulation, MetricKind, TaskRegistry, TaskSpec, SMALL_TASK_LIMIT};
pub use synth::{synth_mixture, SynthProfile, SynthTaskDef, SynthWorld};
pub use vocab::{build_vocab, encode, tokenize, Encoded, Vocab};
