//! Command-line front end. Every command writes its artifacts under
//! `--out` and reports through the given writers; [`run`] returns the
//! process exit code (0 success, 1 runtime failure, 2 usage or config error).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    count_model_params, count_params, flops_per_token, routing_csv, routing_stats, text_table, trace_routing,
};
use crate::checkpoint::{load_checkpoint, save_checkpoint, MANIFEST_FILE};
use crate::encoder::{fresh_init, init_from_dense, EncoderConfig, MtlModel, Variant};
use crate::error::{Error, Result};
use crate::tasks::{build_vocab, load_mixture, synth, Mixture, TaskData, TaskRegistry, TaskSpec, Vocab};
use crate::trainer::{
    encode_dataset, encode_mixture, evaluate, finetune, metrics_csv, mtl_train, EncodedTask, FinetuneConfig,
    GateSource, RunSummary, TrainConfig,
};

/// Random-number streams derived from one seed.
const DATA_STREAM: u64 = 2;
const INIT_STREAM: u64 = 1;

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Parser)]
#[command(name = "moe-mtl", about = "Multi-task Mixture-of-Experts encoders at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Joint multi-task training from a run configuration file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Fine-tune a checkpoint on one task.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        task: String,
        /// Name of a trained task whose gate seeds a new task, or `random`.
        #[arg(long, default_value = "random")]
        gate_from: String,
        /// Mixture manifest holding the task's data.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        max_epochs: usize,
        #[arg(long, default_value_t = 2)]
        patience: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        /// Independent runs with consecutive seeds; the best is kept.
        #[arg(long, default_value_t = 1)]
        repeat: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "finetune-out")]
        out: PathBuf,
    },
    /// Print a task's dev metric.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long)]
        data: PathBuf,
    },
    /// Expert-usage histograms of a task's dev split.
    InspectRouting {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter counts for a run configuration.
    CountParams {
        #[arg(long)]
        config: PathBuf,
    },
    /// Per-token multiply-accumulate counts for a run configuration.
    Flops {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a synthetic mixture (and its held-out probe tasks).
    GenSynth {
        #[arg(long)]
        profile: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Encoder settings of a run file; `vocab_size` and `num_tasks` default
/// to the values implied by the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSection {
    pub num_layers: usize,
    pub hidden: usize,
    /// Defaults to `4 · hidden`.
    pub ffn_inner: Option<usize>,
    pub num_heads: usize,
    pub max_seq_len: usize,
    pub variant: Variant,
    #[serde(default = "one")]
    pub num_experts: usize,
    #[serde(default = "default_dropout")]
    pub dropout_p: f64,
    pub vocab_size: Option<usize>,
    pub num_tasks: Option<usize>,
}

fn one() -> usize {
    1
}

fn default_dropout() -> f64 {
    0.1
}

fn default_max_vocab() -> usize {
    10_000
}

/// A run configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Name of a synthetic profile; exclusive with `mixture`.
    pub synthetic: Option<String>,
    /// Mixture manifest path, relative to this file.
    pub mixture: Option<PathBuf>,
    #[serde(default = "default_max_vocab")]
    pub max_vocab: usize,
    /// Dense checkpoint whose FFNs seed every expert.
    pub init_from: Option<PathBuf>,
    pub encoder: EncoderSection,
    #[serde(default)]
    pub trainer: TrainConfig,
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message().trim())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.mixture, &mut cfg.init_from].into_iter().flatten() {
            *p = base.join(&*p);
            if !p.exists() {
                return Err(Error::Config(format!(
                    "{}: referenced path {} does not exist",
                    path.display(),
                    p.display()
                )));
            }
        }
        if cfg.mixture.is_some() && cfg.synthetic.is_some() {
            return Err(Error::Config("set at most one of `mixture` and `synthetic`".into()));
        }
        cfg.trainer.validate()?;
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(self.trainer.seed)
    }

    /// The configured data, if any.
    pub fn mixture_data(&self) -> Result<Option<Mixture>> {
        match (&self.mixture, &self.synthetic) {
            (Some(m), _) => load_mixture(m).map(Some),
            (None, Some(profile)) => {
                let p = synth::profile(profile)?;
                synth::synth_mixture(&mut seeded(self.seed(), DATA_STREAM), &p).map(Some)
            }
            (None, None) => Ok(None),
        }
    }

    /// Full encoder configuration given the data-derived sizes.
    pub fn encoder_config(&self, vocab_size: Option<usize>, num_tasks: Option<usize>) -> Result<EncoderConfig> {
        let e = &self.encoder;
        let pick = |set: Option<usize>, derived: Option<usize>, what: &str| {
            set.or(derived)
                .ok_or_else(|| Error::Config(format!("encoder.{what} must be set when no data is configured")))
        };
        let cfg = EncoderConfig {
            num_layers: e.num_layers,
            hidden: e.hidden,
            ffn_inner: e.ffn_inner.unwrap_or(4 * e.hidden),
            num_heads: e.num_heads,
            max_seq_len: e.max_seq_len,
            vocab_size: pick(e.vocab_size, vocab_size, "vocab_size")?,
            variant: e.variant,
            num_experts: e.num_experts,
            num_tasks: pick(e.num_tasks, num_tasks, "num_tasks")?,
            dropout_p: e.dropout_p,
        };
        if let (Some(set), Some(need)) = (e.vocab_size, vocab_size) {
            if set < need {
                return Err(Error::Config(format!(
                    "encoder.vocab_size {set} is below the vocabulary size {need}"
                )));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Registry and encoder configuration for analysis commands. Without
    /// data, `num_tasks` binary classification tasks are assumed.
    pub fn analysis_setup(&self) -> Result<(EncoderConfig, TaskRegistry)> {
        match self.mixture_data()? {
            Some(mix) => {
                let vocab = build_vocab(&mix.train_texts(), self.max_vocab)?;
                let registry = mix.registry()?;
                Ok((self.encoder_config(Some(vocab.len()), Some(registry.len()))?, registry))
            }
            None => {
                let cfg = self.encoder_config(None, None)?;
                let registry = TaskRegistry::new(
                    (0..cfg.num_tasks)
                        .map(|t| TaskSpec::classification(&format!("task{t}"), 2, 1))
                        .collect(),
                )?;
                Ok((cfg, registry))
            }
        }
    }
}

/// Exit code for an error: 2 for problems with the invocation or its
/// inputs, 1 for failures while running.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Task(_) | Error::Input(_) => 2,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 {
                write!(stdout, "{e}")
            } else {
                write!(stderr, "{e}")
            };
            return code;
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn out_line(stdout: &mut dyn Write, text: &str) -> Result<()> {
    stdout.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn model_vocab(model: &MtlModel<f32>) -> Result<&Vocab> {
    model
        .vocab
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("checkpoint has no vocabulary".into()))
}

fn task_from_data(data: &Path, name: &str, model: &MtlModel<f32>) -> Result<EncodedTask> {
    let mix = load_mixture(data)?;
    let TaskData { spec, train, dev } = mix
        .get(name)
        .cloned()
        .ok_or_else(|| Error::Task(format!("task `{name}` not found in {}", data.display())))?;
    let vocab = model_vocab(model)?;
    let max_len = model.config().max_seq_len;
    Ok(EncodedTask {
        train: encode_dataset(&spec, &train, vocab, max_len),
        dev: encode_dataset(&spec, &dev, vocab, max_len),
        spec,
    })
}

fn execute(command: Command, stdout: &mut dyn Write) -> Result<()> {
    match command {
        Command::Train {
            config,
            seed,
            out,
            steps,
        } => cmd_train(&config, seed, out, steps, stdout),
        Command::Finetune {
            checkpoint,
            task,
            gate_from,
            data,
            max_epochs,
            patience,
            lr,
            batch_size,
            repeat,
            seed,
            out,
        } => {
            let cfg = FinetuneConfig {
                gate_source: gate_from.parse()?,
                max_epochs,
                patience,
                peak_lr: lr,
                batch_size,
                seed,
                ..FinetuneConfig::default()
            };
            cmd_finetune(&checkpoint, &task, &data, &cfg, repeat, &out, stdout)
        }
        Command::Eval { checkpoint, task, data } => {
            let model = load_checkpoint(&checkpoint)?.model;
            let id = model
                .registry
                .id_of(&task)
                .ok_or_else(|| Error::Task(format!("checkpoint has no task `{task}`")))?;
            let encoded = task_from_data(&data, &task, &model)?;
            let value = evaluate(&model, id, &encoded.dev)?;
            out_line(stdout, &format!("{task} {} {value:?}\n", encoded.spec.metric.as_str()))
        }
        Command::InspectRouting {
            checkpoint,
            data,
            task,
            out,
        } => {
            let model = load_checkpoint(&checkpoint)?.model;
            if !model.config().variant.is_sparse() {
                return Err(Error::Config("the checkpoint is dense and has no routing".into()));
            }
            let id = model
                .registry
                .id_of(&task)
                .ok_or_else(|| Error::Task(format!("checkpoint has no task `{task}`")))?;
            let encoded = task_from_data(&data, &task, &model)?;
            let trace = trace_routing(&model, id, &encoded.dev)?;
            let stats = routing_stats(&[trace], &model.registry, model.config().num_experts)?;
            let csv = routing_csv(&stats);
            match out {
                Some(dir) => {
                    create_dir(&dir)?;
                    write_file(&dir.join("routing.csv"), &csv)?;
                }
                None => out_line(stdout, &csv)?,
            }
            let rows: Vec<Vec<String>> = stats
                .layers
                .iter()
                .flat_map(|l| l.histograms.iter().map(move |h| (l.layer, h)))
                .map(|(l, h)| vec![l.to_string(), h.tokens.to_string(), format!("{:.4}", h.entropy_bits)])
                .collect();
            out_line(stdout, &text_table(&["layer", "tokens", "entropy_bits"], &rows))
        }
        Command::CountParams { config } => {
            let (cfg, registry) = RunConfigFile::load(&config)?.analysis_setup()?;
            out_line(stdout, &count_params(&cfg, &registry)?.table())
        }
        Command::Flops { config } => {
            let (cfg, registry) = RunConfigFile::load(&config)?.analysis_setup()?;
            let heads = registry.tasks().iter().map(TaskSpec::head_outputs).max().unwrap_or(0);
            out_line(stdout, &flops_per_token(&cfg, heads).table())
        }
        Command::GenSynth { profile, out, seed } => {
            let p = synth::profile(&profile)?;
            let mut rng = seeded(seed, DATA_STREAM);
            let world = synth::SynthWorld::new(p, &mut rng)?;
            let mix = world.mixture(&mut rng);
            let manifest = mix.write(&out, "mixture.toml")?;
            let mut report = format!("wrote {}\n", manifest.display());
            if !world.profile.probes.is_empty() {
                let probes = world.probes(&mut rng);
                report += &format!("wrote {}\n", probes.write(&out, "probes.toml")?.display());
            }
            out_line(stdout, &report)
        }
    }
}

fn cmd_train(
    config_path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    steps: Option<usize>,
    stdout: &mut dyn Write,
) -> Result<()> {
    let mut file = RunConfigFile::load(config_path)?;
    if let Some(s) = seed {
        file.seed = Some(s);
    }
    if let Some(s) = steps {
        file.trainer.total_steps = s;
    }
    let seed = file.seed();
    let out = out
        .or_else(|| file.out.clone())
        .ok_or_else(|| Error::Config("no output directory: set `out` or pass --out".into()))?;
    let mix = file
        .mixture_data()?
        .ok_or_else(|| Error::Config("training needs `mixture` or `synthetic`".into()))?;
    let registry = mix.registry()?;
    let mut init_rng = seeded(seed, INIT_STREAM);
    let (model, vocab) = match &file.init_from {
        Some(path) => {
            let dense = load_checkpoint(path)?.model;
            let vocab = model_vocab(&dense)?.clone();
            let cfg = file.encoder_config(Some(dense.config().vocab_size), Some(registry.len()))?;
            (init_from_dense((&dense).into(), &cfg, &registry, &mut init_rng)?, vocab)
        }
        None => {
            let vocab = build_vocab(&mix.train_texts(), file.max_vocab)?;
            let cfg = file.encoder_config(Some(vocab.len()), Some(registry.len()))?;
            (fresh_init(&cfg, &registry, &mut init_rng)?, vocab)
        }
    };
    let model = model.with_vocab(vocab.clone());
    let tasks = encode_mixture(&mix, &vocab, model.config().max_seq_len);
    let train_cfg = TrainConfig {
        seed,
        ..file.trainer.clone()
    };
    let outcome = mtl_train(model, &tasks, &train_cfg)?;

    create_dir(&out)?;
    save_checkpoint(&out.join(MANIFEST_FILE), &outcome.model, Some(&outcome.optimizer))?;
    write_file(&out.join("metrics.csv"), &metrics_csv(&outcome.history))?;
    let model = &outcome.model;
    let routing = if model.config().variant.is_sparse() {
        let traces = tasks
            .iter()
            .enumerate()
            .map(|(t, task)| trace_routing(model, t, &task.dev))
            .collect::<Result<Vec<_>>>()?;
        routing_csv(&routing_stats(&traces, &model.registry, model.config().num_experts)?)
    } else {
        "layer,task,expert_0,entropy_bits\n".to_string()
    };
    write_file(&out.join("routing.csv"), &routing)?;

    let last = outcome.history.last();
    let summary = RunSummary {
        seed,
        variant: model.config().variant.as_str().into(),
        total_params: count_model_params(model)?.total,
        steps: train_cfg.total_steps,
        small_tasks: last.and_then(|r| r.small_tasks),
        all_tasks: last.map(|r| r.all_tasks),
        final_metrics: last
            .map(|r| r.tasks.iter().map(|t| (t.task.clone(), t.value)).collect())
            .unwrap_or_default(),
        config: toml::Table::try_from(&RunConfigFile {
            seed: Some(seed),
            trainer: train_cfg.clone(),
            ..file.clone()
        })
        .map_err(|e| Error::Config(format!("cannot echo config: {e}")))?,
    };
    let text = toml::to_string(&summary).map_err(|e| Error::Config(format!("cannot write summary: {e}")))?;
    write_file(&out.join("summary.txt"), &text)?;
    out_line(
        stdout,
        &format!(
            "trained {} steps; outputs in {}\n",
            train_cfg.total_steps,
            out.display()
        ),
    )
}

fn cmd_finetune(
    checkpoint: &Path,
    task: &str,
    data: &Path,
    config: &FinetuneConfig,
    repeat: usize,
    out: &Path,
    stdout: &mut dyn Write,
) -> Result<()> {
    if repeat == 0 {
        return Err(Error::Config("--repeat must be at least 1".into()));
    }
    let model = load_checkpoint(checkpoint)?.model;
    if let GateSource::Reuse(name) = &config.gate_source {
        if model.registry.id_of(name).is_none() {
            return Err(Error::Config(format!(
                "unknown gate source `{name}`; available: {}, random",
                model.registry.names().join(", ")
            )));
        }
    }
    let encoded = task_from_data(data, task, &model)?;
    let mut best: Option<crate::trainer::FinetuneOutcome> = None;
    let mut lines = String::new();
    for r in 0..repeat {
        let cfg = FinetuneConfig {
            seed: config.seed + r as u64,
            ..config.clone()
        };
        let outcome = finetune(&model, &encoded, &cfg)?;
        lines += &format!(
            "seed {} best {:?} at epoch {} ({} epochs run)\n",
            cfg.seed, outcome.best_metric, outcome.best_epoch, outcome.epochs_run
        );
        if best.as_ref().is_none_or(|b| outcome.best_metric > b.best_metric) {
            best = Some(outcome);
        }
    }
    let best = best.expect("at least one repeat");
    create_dir(out)?;
    save_checkpoint(&out.join(MANIFEST_FILE), &best.model, None)?;
    let mut csv = format!("{}\n", crate::trainer::METRICS_HEADER);
    for (epoch, v) in &best.history {
        csv += &format!("{epoch},{task},{},{v:?}\n", encoded.spec.metric.as_str());
    }
    write_file(&out.join("metrics.csv"), &csv)?;
    let summary = format!(
        "task = {task:?}\ngate_source = {:?}\nmetric = {:?}\nbest = {:?}\n",
        config.gate_source.to_string(),
        encoded.spec.metric.as_str(),
        best.best_metric
    );
    write_file(&out.join("summary.txt"), &summary)?;
    out_line(
        stdout,
        &format!(
            "{lines}{task} {} {:?}\n",
            encoded.spec.metric.as_str(),
            best.best_metric
        ),
    )
}
