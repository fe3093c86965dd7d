use moe_mtl::encoder::{fresh_init, Variant};
use moe_mtl::experiments::{median, DeskScale, SyntheticSetup};
use moe_mtl::numerics::{AdamState, LrSchedule, Tensor};
use moe_mtl::tasks::MetricKind;
use moe_mtl::tasks::{Label, TaskRegistry, TaskSpec};
use moe_mtl::trainer::{
    build_super_batch, evaluate, finetune, metrics_csv, mtl_train, mtl_train_step, sample_tasks, EncodedExample,
    EncodedTask, FinetuneConfig, GateSource, MetricsRecord, Sampling, TaskMetric, TrainConfig,
};
use moe_mtl::{encoder::MtlModel, Error};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn desk() -> DeskScale {
    DeskScale {
        train: TrainConfig {
            total_steps: 60,
            eval_interval: 20,
            ..DeskScale::default().train
        },
        ..DeskScale::default()
    }
}

fn model(setup: &SyntheticSetup, names: &[&str], variant: Variant, seed: u64) -> (MtlModel<f32>, Vec<EncodedTask>) {
    let mix = setup.subset(names);
    let registry = mix.registry().unwrap();
    let cfg = desk().encoder(variant, setup.vocab.len(), registry.len());
    let m = fresh_init(&cfg, &registry, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let tasks = setup.encode(&mix, cfg.max_seq_len);
    (m.with_vocab(setup.vocab.clone()), tasks)
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let setup = SyntheticSetup::new("four-task-v1", 1).unwrap();
    let (mut m, tasks) = model(&setup, &["anchor", "small", "score"], Variant::TaskGate, 1);
    let before = m.params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut opt = AdamState::new(&m.params);
    let schedule = LrSchedule::new(0.0, 0, 10).unwrap();
    for step in 0..3 {
        let sb = build_super_batch(&[0, 1, 2, 0], &tasks, 8, &mut rng).unwrap();
        let report = mtl_train_step(&mut m, &sb, &mut opt, &schedule, step, 1.0, &mut rng).unwrap();
        assert!(report.grad_norm > 0.0);
        assert_eq!(report.lr, 0.0);
    }
    assert!(m.params.bit_eq(&before));
}

#[test]
fn gates_and_heads_of_absent_tasks_do_not_move() {
    let setup = SyntheticSetup::new("four-task-v1", 2).unwrap();
    let (mut m, tasks) = model(&setup, &["anchor", "small", "unrelated"], Variant::TaskGate, 2);
    let before = m.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut opt = AdamState::new(&m.params);
    let schedule = LrSchedule::new(1e-3, 0, 20).unwrap();
    for step in 0..20 {
        let sb = build_super_batch(&[0, 1, 0, 1], &tasks, 8, &mut rng).unwrap();
        mtl_train_step(&mut m, &sb, &mut opt, &schedule, step, 1.0, &mut rng).unwrap();
    }
    for layer in 0..m.config().num_layers {
        assert!(m
            .gate_weights(layer, 2)
            .unwrap()
            .bit_eq(before.gate_weights(layer, 2).unwrap()));
        assert!(!m
            .gate_weights(layer, 0)
            .unwrap()
            .bit_eq(before.gate_weights(layer, 0).unwrap()));
    }
    let head = m.head(2).unwrap();
    assert!(m.params.get(head.weight).bit_eq(before.params.get(head.weight)));
    assert!(m.params.get(head.bias).bit_eq(before.params.get(head.bias)));
}

#[test]
fn training_loss_falls_on_a_separable_task() {
    let mut ratios = Vec::new();
    for seed in 0..5 {
        let setup = SyntheticSetup::new("four-task-v1", seed).unwrap();
        let (mut m, tasks) = model(&setup, &["anchor"], Variant::TaskGate, seed);
        m.encoder.config.dropout_p = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut opt = AdamState::new(&m.params);
        let schedule = LrSchedule::new(1e-3, 20, 200).unwrap();
        let mut losses = Vec::new();
        for step in 0..200 {
            let sb = build_super_batch(&[0; 4], &tasks, 8, &mut rng).unwrap();
            let report = mtl_train_step(&mut m, &sb, &mut opt, &schedule, step, 1.0, &mut rng).unwrap();
            assert!(report.grad_norm.is_finite());
            losses.push(report.total_loss);
        }
        let head: f64 = losses[..20].iter().sum();
        let tail: f64 = losses[180..].iter().sum();
        ratios.push(tail / head);
    }
    assert!(median(&ratios) < 0.8, "{ratios:?}");
}

#[test]
fn history_has_one_record_per_interval_and_zero_steps_is_identity() {
    let setup = SyntheticSetup::new("four-task-v1", 3).unwrap();
    let (m, tasks) = model(&setup, &["small", "score"], Variant::SharedGate, 3);
    let cfg = TrainConfig {
        total_steps: 50,
        eval_interval: 20,
        ..desk().train
    };
    let out = mtl_train(m.clone(), &tasks, &cfg).unwrap();
    assert_eq!(out.history.len(), 2);
    assert_eq!(out.history.iter().map(|r| r.step).collect::<Vec<_>>(), vec![20, 40]);

    let idle = mtl_train(
        m.clone(),
        &tasks,
        &TrainConfig {
            total_steps: 0,
            ..cfg.clone()
        },
    )
    .unwrap();
    assert!(idle.history.is_empty());
    assert!(idle.model.params.bit_eq(&m.params));

    let swapped = [tasks[1].clone(), tasks[0].clone()];
    assert!(matches!(mtl_train(m, &swapped, &cfg), Err(Error::Config(_))));
}

#[test]
fn identical_runs_write_identical_metrics() {
    let setup = SyntheticSetup::new("four-task-v1", 4).unwrap();
    let (m, tasks) = model(&setup, &["small", "score"], Variant::TaskGate, 4);
    let cfg = TrainConfig {
        seed: 9,
        ..desk().train
    };
    let a = mtl_train(m.clone(), &tasks, &cfg).unwrap();
    let b = mtl_train(m, &tasks, &cfg).unwrap();
    assert_eq!(metrics_csv(&a.history), metrics_csv(&b.history));
    assert!(a.model.params.bit_eq(&b.model.params));
}

#[test]
fn natural_sampling_follows_dataset_sizes() {
    let sizes = [100usize, 300, 600, 1000];
    let registry = TaskRegistry::new(
        sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| TaskSpec::classification(&format!("t{i}"), 2, n))
            .collect(),
    )
    .unwrap();
    let draws = 10_000;
    let ids = sample_tasks(&registry, Sampling::Natural, draws, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let total: usize = sizes.iter().sum();
    let chi2: f64 = (0..4)
        .map(|t| {
            let observed = ids.iter().filter(|&&i| i == t).count() as f64;
            let expected = draws as f64 * sizes[t] as f64 / total as f64;
            (observed - expected).powi(2) / expected
        })
        .sum();
    // 0.999 quantile of chi-square with 3 degrees of freedom.
    assert!(chi2 < 16.27, "chi2 = {chi2}");
}

#[test]
fn small_task_mean_covers_only_small_tasks() {
    let specs = [
        TaskSpec::classification("big", 2, 20_000),
        TaskSpec::classification("edge", 2, 10_000),
        TaskSpec::regression("tiny", 50),
    ];
    let metric = |task: &str, value| TaskMetric {
        task: task.into(),
        metric: MetricKind::Accuracy,
        value,
        train_loss: None,
    };
    let rec = MetricsRecord::new(
        1,
        vec![metric("big", 0.9), metric("edge", 0.6), metric("tiny", 0.4)],
        &specs.iter().collect::<Vec<_>>(),
    );
    assert!((rec.small_tasks.unwrap() - 0.5).abs() < 1e-12);
    assert!((rec.all_tasks - 1.9 / 3.0).abs() < 1e-12);
}

#[test]
fn constant_predictor_scores_chance_on_balanced_dev() {
    let setup = SyntheticSetup::new("four-task-v1", 6).unwrap();
    let (mut m, tasks) = model(&setup, &["anchor"], Variant::Dense, 6);
    let head = *m.head(0).unwrap();
    *m.params.get_mut(head.weight) = Tensor::zeros(m.params.get(head.weight).shape());
    *m.params.get_mut(head.bias) = Tensor::from_f64(&[2], &[0.0, 1.0]).unwrap();
    let dev: Vec<EncodedExample> = tasks[0]
        .train
        .iter()
        .filter(|e| e.label == Label::Class(0))
        .take(50)
        .chain(tasks[0].train.iter().filter(|e| e.label == Label::Class(1)).take(50))
        .cloned()
        .collect();
    assert_eq!(evaluate(&m, 0, &dev).unwrap(), 0.5);
    assert_eq!(evaluate(&m, 0, &dev).unwrap(), evaluate(&m, 0, &dev).unwrap());
}

fn finetune_setup() -> (MtlModel<f32>, EncodedTask) {
    let setup = SyntheticSetup::new("four-task-v1", 7).unwrap();
    let (m, tasks) = model(&setup, &["anchor", "unrelated"], Variant::TaskGate, 7);
    let trained = mtl_train(
        m,
        &tasks,
        &TrainConfig {
            total_steps: 40,
            eval_interval: 40,
            ..desk().train
        },
    )
    .unwrap();
    let probe = setup.encode(&setup.probes, desk().max_seq_len).remove(0);
    (trained.model, probe)
}

#[test]
fn reused_gate_is_an_exact_copy_before_training() {
    let (m, probe) = finetune_setup();
    let cfg = FinetuneConfig {
        gate_source: "anchor".parse().unwrap(),
        max_epochs: 0,
        ..desk().finetune
    };
    let out = finetune(&m, &probe, &cfg).unwrap();
    assert_eq!((out.task_id, out.best_epoch, out.epochs_run), (2, 0, 0));
    assert_eq!(out.history.len(), 1);
    for layer in 0..m.config().num_layers {
        assert!(out
            .model
            .gate_weights(layer, 2)
            .unwrap()
            .bit_eq(m.gate_weights(layer, 0).unwrap()));
    }

    let bad = FinetuneConfig {
        gate_source: GateSource::Reuse("nope".into()),
        ..cfg
    };
    match finetune(&m, &probe, &bad) {
        Err(Error::Config(msg)) => assert!(msg.contains("anchor, unrelated, random"), "{msg}"),
        other => panic!("expected a config error, got {:?}", other.map(|o| o.best_metric)),
    }
}

#[test]
fn patience_stops_a_flat_run_after_two_epochs() {
    let (m, probe) = finetune_setup();
    let cfg = FinetuneConfig {
        gate_source: GateSource::Random,
        max_epochs: 10,
        patience: 1,
        peak_lr: 0.0,
        ..desk().finetune
    };
    let out = finetune(&m, &probe, &cfg).unwrap();
    assert_eq!(out.epochs_run, 2);
    assert_eq!(out.best_epoch, 0);
}

#[test]
fn selected_model_never_scores_below_the_start() {
    let (m, probe) = finetune_setup();
    for (seed, source) in [(0, "anchor"), (1, "random")] {
        let cfg = FinetuneConfig {
            gate_source: source.parse().unwrap(),
            max_epochs: 3,
            seed,
            ..desk().finetune
        };
        let out = finetune(&m, &probe, &cfg).unwrap();
        let best = out.history.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.best_metric, best);
        assert!(out.best_metric >= out.history[0].1);
        assert_eq!(evaluate(&out.model, out.task_id, &probe.dev).unwrap(), out.best_metric);
    }
}
