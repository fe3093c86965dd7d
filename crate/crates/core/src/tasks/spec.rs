use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    SingleTextClassification,
    PairwiseTextClassification,
    PairwiseTextRegression,
}

impl Formulation {
    pub fn is_regression(self) -> bool {
        matches!(self, Formulation::PairwiseTextRegression)
    }

    pub fn is_pairwise(self) -> bool {
        !matches!(self, Formulation::SingleTextClassification)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    Mcc,
    Spearman,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::Mcc => "mcc",
            MetricKind::Spearman => "spearman",
        }
    }
}

/// One task of a multi-task mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub formulation: Formulation,
    /// Class count for classification; exactly 1 for regression.
    pub num_classes: usize,
    pub metric: MetricKind,
    /// Number of training examples.
    pub dataset_size: usize,
}

/// Tasks with at most this many training examples form the small-task
/// aggregate.
pub const SMALL_TASK_LIMIT: usize = 10_000;

impl TaskSpec {
    pub fn classification(name: &str, num_classes: usize, dataset_size: usize) -> Self {
        Self {
            name: name.to_string(),
            formulation: Formulation::SingleTextClassification,
            num_classes,
            metric: MetricKind::Accuracy,
            dataset_size,
        }
    }

    pub fn regression(name: &str, dataset_size: usize) -> Self {
        Self {
            name: name.to_string(),
            formulation: Formulation::PairwiseTextRegression,
            num_classes: 1,
            metric: MetricKind::Spearman,
            dataset_size,
        }
    }

    /// Width of the task head: `C_t` for classification, 1 for regression.
    pub fn head_outputs(&self) -> usize {
        if self.formulation.is_regression() {
            1
        } else {
            self.num_classes
        }
    }

    pub fn is_small(&self) -> bool {
        self.dataset_size <= SMALL_TASK_LIMIT
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("task `{}`: {msg}", self.name)));
        if self.name.is_empty() || self.name.chars().any(|c| c.is_whitespace()) {
            return bad("names must be non-empty without whitespace".into());
        }
        let regression = self.formulation.is_regression();
        if regression != (self.metric == MetricKind::Spearman) {
            return bad("regression tasks use spearman and only they do".into());
        }
        if regression && self.num_classes != 1 {
            return bad(format!("regression needs num_classes = 1, got {}", self.num_classes));
        }
        if !regression && self.num_classes < 2 {
            return bad(format!(
                "classification needs at least 2 classes, got {}",
                self.num_classes
            ));
        }
        if self.metric == MetricKind::Mcc && self.num_classes != 2 {
            return bad("mcc is defined for binary tasks only".into());
        }
        Ok(())
    }
}

/// Ordered set of tasks; a task's id is its position.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskRegistry {
    tasks: Vec<TaskSpec>,
}

impl TaskRegistry {
    pub fn new(tasks: Vec<TaskSpec>) -> Result<Self> {
        let registry = Self { tasks };
        registry.validate()?;
        Ok(registry)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.tasks.iter().enumerate() {
            t.validate()?;
            if self.tasks[..i].iter().any(|o| o.name == t.name) {
                return Err(Error::Config(format!("duplicate task name `{}`", t.name)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn get(&self, task_id: usize) -> Result<&TaskSpec> {
        self.tasks
            .get(task_id)
            .ok_or_else(|| Error::Task(format!("task id {task_id} out of range 0..{}", self.tasks.len())))
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.tasks.iter().map(|t| t.name.as_str()).collect()
    }

    pub fn push(&mut self, spec: TaskSpec) -> Result<usize> {
        spec.validate()?;
        if self.id_of(&spec.name).is_some() {
            return Err(Error::Config(format!("duplicate task name `{}`", spec.name)));
        }
        self.tasks.push(spec);
        Ok(self.tasks.len() - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_rejects_duplicates_and_bad_metric_pairs() {
        let a = TaskSpec::classification("a", 2, 10);
        assert!(TaskRegistry::new(vec![a.clone(), a.clone()]).is_err());
        let mut r = TaskSpec::regression("r", 10);
        r.metric = MetricKind::Accuracy;
        assert!(r.validate().is_err());
        let mut m = TaskSpec::classification("m", 3, 10);
        m.metric = MetricKind::Mcc;
        assert!(m.validate().is_err());
        let reg = TaskRegistry::new(vec![a, TaskSpec::regression("r", 10)]).unwrap();
        assert_eq!(reg.id_of("r"), Some(1));
        assert_eq!(reg.get(1).unwrap().head_outputs(), 1);
        assert!(matches!(reg.get(2), Err(Error::Task(_))));
    }
}
