use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::tasks::{MetricKind, TaskSpec};

/// Dev metric (and recent training loss) of one task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskMetric {
    pub task: String,
    pub metric: MetricKind,
    pub value: f64,
    /// Mean scaled loss over the steps since the previous evaluation.
    pub train_loss: Option<f64>,
}

/// Evaluation of every task at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub step: usize,
    pub tasks: Vec<TaskMetric>,
    /// Mean over tasks with at most 10,000 training examples.
    pub small_tasks: Option<f64>,
    pub all_tasks: f64,
}

impl MetricsRecord {
    pub fn new(step: usize, tasks: Vec<TaskMetric>, specs: &[&TaskSpec]) -> Self {
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let all: Vec<f64> = tasks.iter().map(|t| t.value).collect();
        let small: Vec<f64> = tasks
            .iter()
            .zip(specs)
            .filter(|(_, s)| s.is_small())
            .map(|(t, _)| t.value)
            .collect();
        Self {
            step,
            small_tasks: mean(&small),
            all_tasks: mean(&all).unwrap_or(f64::NAN),
            tasks,
        }
    }

    pub fn value(&self, task: &str) -> Option<f64> {
        self.tasks.iter().find(|t| t.task == task).map(|t| t.value)
    }
}

pub const METRICS_HEADER: &str = "step,task,metric_name,value";

/// `step,task,metric_name,value` rows: each task's dev metric and training
/// loss, then the `small_tasks` and `all_tasks` means.
pub fn metrics_csv(history: &[MetricsRecord]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in history {
        for t in &r.tasks {
            writeln!(out, "{},{},{},{:?}", r.step, t.task, t.metric.as_str(), t.value).unwrap();
            if let Some(l) = t.train_loss {
                writeln!(out, "{},{},train_loss,{l:?}", r.step, t.task).unwrap();
            }
        }
        if let Some(s) = r.small_tasks {
            writeln!(out, "{},small_tasks,mean,{s:?}", r.step).unwrap();
        }
        writeln!(out, "{},all_tasks,mean,{:?}", r.step, r.all_tasks).unwrap();
    }
    out
}

/// Final results of a run, written as `summary.txt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub variant: String,
    pub total_params: u64,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub small_tasks: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub all_tasks: Option<f64>,
    #[serde(default)]
    pub final_metrics: std::collections::BTreeMap<String, f64>,
    /// Echo of the run configuration.
    pub config: toml::Table,
}
