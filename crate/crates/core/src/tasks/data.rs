use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::{Formulation, MetricKind, TaskRegistry, TaskSpec};

pub const DATASET_HEADER: &str = "text_a\ttext_b\tlabel";

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Label {
    Class(usize),
    Score(f64),
}

impl Label {
    pub fn class(self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(c),
            Label::Score(_) => None,
        }
    }

    pub fn score(self) -> Option<f64> {
        match self {
            Label::Score(s) => Some(s),
            Label::Class(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub text_a: String,
    pub text_b: Option<String>,
    pub label: Label,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn class_labels(&self) -> Result<Vec<usize>> {
        self.examples
            .iter()
            .map(|e| {
                e.label
                    .class()
                    .ok_or_else(|| Error::Data("expected class labels".into()))
            })
            .collect()
    }

    pub fn scores(&self) -> Result<Vec<f64>> {
        self.examples
            .iter()
            .map(|e| {
                e.label
                    .score()
                    .ok_or_else(|| Error::Data("expected regression scores".into()))
            })
            .collect()
    }

    /// Serialises in the tab-separated dataset format.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(DATASET_HEADER);
        out.push('\n');
        for e in &self.examples {
            let label = match e.label {
                Label::Class(c) => c.to_string(),
                Label::Score(s) => format!("{s:?}"),
            };
            out.push_str(&format!(
                "{}\t{}\t{label}\n",
                e.text_a,
                e.text_b.as_deref().unwrap_or("")
            ));
        }
        out
    }
}

/// Parses a dataset file body. `score_range` maps regression scores
/// affinely from `[lo, hi]` onto `[0, 1]`.
pub fn parse_dataset(text: &str, spec: &TaskSpec, score_range: Option<[f64; 2]>) -> Result<Dataset> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == DATASET_HEADER => {}
        _ => {
            return Err(Error::Data(format!(
                "line 1: expected header `{}`",
                DATASET_HEADER.replace('\t', "<TAB>")
            )))
        }
    }
    let mut examples = Vec::new();
    for (i, raw) in lines {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Data(format!(
                "line {line_no}: expected 3 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let bad = |msg: String| Error::Data(format!("line {line_no}: {msg}"));
        let label = if spec.formulation.is_regression() {
            let v: f64 = fields[2]
                .trim()
                .parse()
                .map_err(|_| bad(format!("`{}` is not a number", fields[2])))?;
            let v = match score_range {
                Some([lo, hi]) => (v - lo) / (hi - lo),
                None => v,
            };
            if !v.is_finite() {
                return Err(bad("score is not finite".into()));
            }
            Label::Score(v)
        } else {
            let c: usize = fields[2]
                .trim()
                .parse()
                .map_err(|_| bad(format!("`{}` is not a class id", fields[2])))?;
            if c >= spec.num_classes {
                return Err(bad(format!("label {c} outside 0..{}", spec.num_classes)));
            }
            Label::Class(c)
        };
        let text_b = (!fields[1].is_empty()).then(|| fields[1].to_string());
        if spec.formulation.is_pairwise() && text_b.is_none() {
            return Err(bad("pairwise task needs text_b".into()));
        }
        examples.push(Example {
            text_a: fields[0].to_string(),
            text_b,
            label,
        });
    }
    Ok(Dataset { examples })
}

pub fn load_dataset(path: &Path, spec: &TaskSpec, score_range: Option<[f64; 2]>) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, spec, score_range).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// One `[[task]]` entry of a mixture manifest. Paths are relative to the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestTask {
    pub name: String,
    pub formulation: Formulation,
    pub num_classes: usize,
    pub metric: MetricKind,
    pub train: PathBuf,
    pub dev: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_range: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureManifest {
    pub task: Vec<ManifestTask>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub spec: TaskSpec,
    pub train: Dataset,
    pub dev: Dataset,
}

/// Tasks of a training mixture, in task-id order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mixture {
    pub tasks: Vec<TaskData>,
}

impl Mixture {
    pub fn registry(&self) -> Result<TaskRegistry> {
        TaskRegistry::new(self.tasks.iter().map(|t| t.spec.clone()).collect())
    }

    pub fn get(&self, name: &str) -> Option<&TaskData> {
        self.tasks.iter().find(|t| t.spec.name == name)
    }

    /// Every text in the training splits, for vocabulary building.
    pub fn train_texts(&self) -> Vec<&str> {
        self.tasks
            .iter()
            .flat_map(|t| &t.train.examples)
            .flat_map(|e| std::iter::once(e.text_a.as_str()).chain(e.text_b.as_deref()))
            .collect()
    }

    /// Writes `<name>.train.tsv`, `<name>.dev.tsv` and a manifest named
    /// `manifest_name` into `dir`.
    pub fn write(&self, dir: &Path, manifest_name: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::new();
        for t in &self.tasks {
            let train = PathBuf::from(format!("{}.train.tsv", t.spec.name));
            let dev = PathBuf::from(format!("{}.dev.tsv", t.spec.name));
            for (file, data) in [(&train, &t.train), (&dev, &t.dev)] {
                let p = dir.join(file);
                fs::write(&p, data.to_tsv()).map_err(|e| Error::io(&p, e))?;
            }
            entries.push(ManifestTask {
                name: t.spec.name.clone(),
                formulation: t.spec.formulation,
                num_classes: t.spec.num_classes,
                metric: t.spec.metric,
                train,
                dev,
                score_range: None,
            });
        }
        let body = toml::to_string(&MixtureManifest { task: entries })
            .map_err(|e| Error::Data(format!("cannot serialise manifest: {e}")))?;
        let path = dir.join(manifest_name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

pub fn load_mixture(manifest: &Path) -> Result<Mixture> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let parsed: MixtureManifest =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", manifest.display(), e.message())))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut tasks = Vec::new();
    for entry in parsed.task {
        let mut spec = TaskSpec {
            name: entry.name.clone(),
            formulation: entry.formulation,
            num_classes: entry.num_classes,
            metric: entry.metric,
            dataset_size: 0,
        };
        spec.validate()?;
        let train = load_dataset(&base.join(&entry.train), &spec, entry.score_range)?;
        let dev = load_dataset(&base.join(&entry.dev), &spec, entry.score_range)?;
        if train.is_empty() || dev.is_empty() {
            return Err(Error::Data(format!("task `{}` has an empty split", spec.name)));
        }
        spec.dataset_size = train.len();
        tasks.push(TaskData { spec, train, dev });
    }
    let mixture = Mixture { tasks };
    mixture.registry()?;
    Ok(mixture)
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = "text_a\ttext_b\tlabel\ngood film\t\t1\nbad film\t\t0\nok\t\t1\n";

    #[test]
    fn parses_rows_and_line_endings() {
        let spec = TaskSpec::classification("s", 2, 3);
        let lf = parse_dataset(THREE, &spec, None).unwrap();
        assert_eq!(lf.len(), 3);
        let crlf = parse_dataset(&THREE.replace('\n', "\r\n"), &spec, None).unwrap();
        assert_eq!(lf, crlf);
        assert_eq!(lf.examples[0].label, Label::Class(1));
        assert_eq!(lf.examples[0].text_b, None);
    }

    #[test]
    fn errors_name_the_line() {
        let spec = TaskSpec::classification("s", 2, 3);
        let err = parse_dataset("text_a\ttext_b\tlabel\na\t\t0\nb\t\t7\n", &spec, None).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = parse_dataset("text_a\ttext_b\tlabel\na\t0\n", &spec, None).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(parse_dataset("nope\n", &spec, None).is_err());
    }

    #[test]
    fn scores_are_rescaled() {
        let spec = TaskSpec::regression("r", 1);
        let d = parse_dataset("text_a\ttext_b\tlabel\na\tb\t3.0\n", &spec, Some([1.0, 5.0])).unwrap();
        assert_eq!(d.examples[0].label, Label::Score(0.5));
        assert!(parse_dataset("text_a\ttext_b\tlabel\na\t\t3.0\n", &spec, None).is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let spec = TaskSpec::regression("r", 1);
        let d = Dataset {
            examples: vec![Example {
                text_a: "a b".into(),
                text_b: Some("c".into()),
                label: Label::Score(0.1 + 0.2),
            }],
        };
        assert_eq!(parse_dataset(&d.to_tsv(), &spec, None).unwrap(), d);
    }
}
