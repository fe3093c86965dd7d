//! Synthetic text tasks built from planted linear rules.
//!
//! Every word carries a hidden vector `z_w ~ N(0, I)`. A rule is a unit
//! vector `r`; a sentence's score is the mean of `r · z_w` over its words.
//! Tasks that share a rule are related, tasks with different rules are
//! not. Because labels are a deterministic function of the score flipped
//! with probability `noise`, the Bayes-optimal accuracy is `1 - noise`.
//! Pairwise tasks score the two texts jointly by averaging their scores.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tasks::{Dataset, Example, Formulation, Label, MetricKind, Mixture, TaskData, TaskSpec};

/// Slope of the logistic link used for pairwise regression targets.
const REGRESSION_SLOPE: f64 = 3.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthTaskDef {
    pub name: String,
    pub formulation: Formulation,
    pub metric: MetricKind,
    pub rule: usize,
    /// Multiplies the rule's score; `-1` yields a task conflicting with `+1`.
    pub sign: f64,
    pub train_size: usize,
    pub dev_size: usize,
    /// Probability that a classification label is flipped.
    pub noise: f64,
}

impl SynthTaskDef {
    pub fn new(name: &str, formulation: Formulation, rule: usize, train_size: usize) -> Self {
        let metric = if formulation.is_regression() {
            MetricKind::Spearman
        } else {
            MetricKind::Accuracy
        };
        Self {
            name: name.into(),
            formulation,
            metric,
            rule,
            sign: 1.0,
            train_size,
            dev_size: 500,
            noise: 0.05,
        }
    }

    pub fn spec(&self) -> TaskSpec {
        TaskSpec {
            name: self.name.clone(),
            formulation: self.formulation,
            num_classes: if self.formulation.is_regression() { 1 } else { 2 },
            metric: self.metric,
            dataset_size: self.train_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthProfile {
    pub name: String,
    pub num_words: usize,
    pub latent_dim: usize,
    pub num_rules: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub tasks: Vec<SynthTaskDef>,
    /// Held-out tasks from the same world, used for fine-tuning studies.
    pub probes: Vec<SynthTaskDef>,
}

pub const PROFILES: [&str; 2] = ["four-task-v1", "conflict-v1"];

/// Looks up a named profile.
///
/// `four-task-v1`: a large task (5,000) and a small task (300) sharing one
/// rule, a pairwise regression task on the same rule, and an unrelated
/// task on a second rule. Probes: a small task on the shared rule and one
/// on the unrelated rule.
///
/// `conflict-v1`: two equally sized tasks whose labels are exact opposites.
pub fn profile(name: &str) -> Result<SynthProfile> {
    use Formulation::*;
    let base = |tasks, probes| SynthProfile {
        name: name.into(),
        num_words: 40,
        latent_dim: 8,
        num_rules: 2,
        min_words: 4,
        max_words: 9,
        tasks,
        probes,
    };
    match name {
        "four-task-v1" => {
            let mut small = SynthTaskDef::new("small", SingleTextClassification, 0, 300);
            small.noise = 0.1;
            let mut score = SynthTaskDef::new("score", PairwiseTextRegression, 0, 1000);
            score.dev_size = 300;
            let mut unrelated = SynthTaskDef::new("unrelated", SingleTextClassification, 1, 2000);
            unrelated.metric = MetricKind::Mcc;
            let mut probe = SynthTaskDef::new("probe", SingleTextClassification, 0, 200);
            probe.noise = 0.1;
            let mut probe_other = SynthTaskDef::new("probe_other", SingleTextClassification, 1, 200);
            probe_other.noise = 0.1;
            Ok(base(
                vec![
                    SynthTaskDef::new("anchor", SingleTextClassification, 0, 5000),
                    small,
                    score,
                    unrelated,
                ],
                vec![probe, probe_other],
            ))
        }
        "conflict-v1" => {
            let mut flipped = SynthTaskDef::new("flipped", SingleTextClassification, 0, 2000);
            flipped.sign = -1.0;
            Ok(base(
                vec![SynthTaskDef::new("plain", SingleTextClassification, 0, 2000), flipped],
                Vec::new(),
            ))
        }
        other => Err(Error::Config(format!(
            "unknown synthetic profile `{other}` (known: {})",
            PROFILES.join(", ")
        ))),
    }
}

/// Hidden word vectors and rules shared by every task of a profile.
#[derive(Clone, Debug)]
pub struct SynthWorld {
    pub profile: SynthProfile,
    words: Vec<String>,
    /// `word_scores[rule][word] = r · z_w`.
    word_scores: Vec<Vec<f64>>,
}

impl SynthWorld {
    pub fn new<R: Rng + ?Sized>(profile: SynthProfile, rng: &mut R) -> Result<Self> {
        if profile.num_words == 0 || profile.latent_dim == 0 || profile.num_rules == 0 {
            return Err(Error::Config(
                "profile needs words, a latent dimension and rules".into(),
            ));
        }
        if profile.min_words == 0 || profile.min_words > profile.max_words {
            return Err(Error::Config("profile sentence length range is empty".into()));
        }
        for t in profile.tasks.iter().chain(&profile.probes) {
            t.spec().validate()?;
            if t.rule >= profile.num_rules || !(0.0..0.5).contains(&t.noise) || t.dev_size == 0 || t.train_size == 0 {
                return Err(Error::Config(format!("invalid synthetic task `{}`", t.name)));
            }
        }
        let mut normal = || -> f64 { StandardNormal.sample(rng) };
        let latent: Vec<Vec<f64>> = (0..profile.num_words)
            .map(|_| (0..profile.latent_dim).map(|_| normal()).collect())
            .collect();
        let word_scores = (0..profile.num_rules)
            .map(|_| {
                let r: Vec<f64> = (0..profile.latent_dim).map(|_| normal()).collect();
                let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                latent
                    .iter()
                    .map(|z| z.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / norm)
                    .collect()
            })
            .collect();
        let words = (0..profile.num_words).map(|i| format!("w{i}")).collect();
        Ok(Self {
            profile,
            words,
            word_scores,
        })
    }

    /// Score of `text` under `rule`: the mean per-word projection.
    pub fn score(&self, rule: usize, text: &str) -> f64 {
        let ws: Vec<f64> = text
            .split_whitespace()
            .filter_map(|w| w.strip_prefix('w')?.parse::<usize>().ok())
            .map(|i| self.word_scores[rule][i])
            .collect();
        if ws.is_empty() {
            0.0
        } else {
            ws.iter().sum::<f64>() / ws.len() as f64
        }
    }

    /// Noise-free label or target of the planted rule.
    pub fn bayes_label(&self, def: &SynthTaskDef, text_a: &str, text_b: Option<&str>) -> Label {
        let s = def.sign
            * match text_b {
                Some(b) => (self.score(def.rule, text_a) + self.score(def.rule, b)) / 2.0,
                None => self.score(def.rule, text_a),
            };
        if def.formulation.is_regression() {
            Label::Score(1.0 / (1.0 + (-REGRESSION_SLOPE * s).exp()))
        } else {
            Label::Class(usize::from(s > 0.0))
        }
    }

    fn sentence<R: Rng + ?Sized>(&self, rng: &mut R) -> String {
        let n = rng.random_range(self.profile.min_words..=self.profile.max_words);
        (0..n)
            .map(|_| self.words.choose(rng).expect("words").as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn dataset<R: Rng + ?Sized>(&self, def: &SynthTaskDef, size: usize, rng: &mut R) -> Dataset {
        let examples = (0..size)
            .map(|_| {
                let text_a = self.sentence(rng);
                let text_b = def.formulation.is_pairwise().then(|| self.sentence(rng));
                let label = match self.bayes_label(def, &text_a, text_b.as_deref()) {
                    Label::Class(c) if rng.random::<f64>() < def.noise => Label::Class(1 - c),
                    other => other,
                };
                Example { text_a, text_b, label }
            })
            .collect();
        Dataset { examples }
    }

    pub fn task<R: Rng + ?Sized>(&self, def: &SynthTaskDef, rng: &mut R) -> TaskData {
        let train = self.dataset(def, def.train_size, rng);
        let dev = self.dataset(def, def.dev_size, rng);
        TaskData {
            spec: def.spec(),
            train,
            dev,
        }
    }

    pub fn mixture<R: Rng + ?Sized>(&self, rng: &mut R) -> Mixture {
        Mixture {
            tasks: self.profile.tasks.iter().map(|d| self.task(d, rng)).collect(),
        }
    }

    pub fn probes<R: Rng + ?Sized>(&self, rng: &mut R) -> Mixture {
        Mixture {
            tasks: self.profile.probes.iter().map(|d| self.task(d, rng)).collect(),
        }
    }
}

/// Generates the training mixture of a profile.
pub fn synth_mixture<R: Rng + ?Sized>(rng: &mut R, profile: &SynthProfile) -> Result<Mixture> {
    Ok(SynthWorld::new(profile.clone(), rng)?.mixture(rng))
}
