//! Acceptance suite. Runs every criterion in order and prints one
//! `PASS`/`FAIL` line each; the process fails if any criterion fails.
//!
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 1 5 7`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use moe_mtl::analysis::{count_params, flops_per_token};
use moe_mtl::checkpoint::{load_checkpoint, save_checkpoint, MANIFEST_FILE};
use moe_mtl::encoder::{
    encoder_forward, expert_forward, fresh_init, init_from_dense, moe_layer_forward, transformer_block_forward,
    Dispatch, EncoderConfig, FfnParams, MtlModel, TokenBatch, Variant,
};
use moe_mtl::experiments::{finetune_metric, median, train_variant, DeskScale, SyntheticSetup};
use moe_mtl::numerics::{grad_check, grad_check_params, Graph, ParamSet, Tensor};
use moe_mtl::tasks::{classification_loss, TaskRegistry, TaskSpec};
use moe_mtl::trainer::{metrics_csv, sample_tasks, GateSource, Sampling, TrainOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = anyhow::Result<(bool, String)>;

const SEEDS: u64 = 5;
const FULL: [&str; 4] = ["anchor", "small", "score", "unrelated"];
const COMMON: [&str; 3] = ["anchor", "small", "score"];

/// Stage-one runs shared by the transfer, gate-reuse, robustness and
/// determinism criteria.
#[derive(Default)]
struct Runs {
    setups: Vec<SyntheticSetup>,
    task_gate_full: Vec<TrainOutcome>,
}

impl Runs {
    fn setups(&mut self) -> anyhow::Result<&[SyntheticSetup]> {
        if self.setups.is_empty() {
            self.setups = (0..SEEDS)
                .map(|s| SyntheticSetup::new("four-task-v1", s))
                .collect::<Result<_, _>>()?;
        }
        Ok(&self.setups)
    }

    fn task_gate_full(&mut self) -> anyhow::Result<&[TrainOutcome]> {
        if self.task_gate_full.is_empty() {
            self.setups()?;
            let desk = DeskScale::default();
            for (seed, setup) in self.setups.iter().enumerate() {
                let mix = setup.subset(&FULL);
                self.task_gate_full
                    .push(train_variant(setup, &mix, Variant::TaskGate, &desk, seed as u64)?);
            }
        }
        Ok(&self.task_gate_full)
    }
}

fn registry(t: usize) -> TaskRegistry {
    TaskRegistry::new(
        (0..t)
            .map(|i| TaskSpec::classification(&format!("task{i}"), 2, 1000))
            .collect(),
    )
    .unwrap()
}

fn minilm(variant: Variant, layers: usize, experts: usize, tasks: usize, vocab: usize) -> EncoderConfig {
    EncoderConfig {
        num_layers: layers,
        hidden: 384,
        ffn_inner: 1536,
        num_heads: 12,
        max_seq_len: 512,
        vocab_size: vocab,
        variant,
        num_experts: experts,
        num_tasks: tasks,
        dropout_p: 0.1,
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale).collect(),
    )
    .unwrap()
}

fn gating_arithmetic(_: &mut Runs) -> Outcome {
    let headline = count_params(&minilm(Variant::TaskGate, 6, 4, 8, 30522), &registry(8))?;
    let mut ok = headline.gating_params == 73_728;
    let mut checked = 0;
    for n in [1, 2, 4, 6] {
        for l in [1, 2, 6] {
            for (variant, t) in [
                (Variant::TaskGate, 1),
                (Variant::TaskGate, 8),
                (Variant::SharedGate, 8),
                (Variant::Dense, 8),
            ] {
                let n = if variant == Variant::Dense { 1 } else { n };
                let cfg = minilm(variant, l, n, t, 1000);
                let reg = registry(t);
                // count_params itself fails when its formulas disagree with
                // the instantiated tensors; the sums below are a second,
                // independent check of the role totals.
                let report = count_params(&cfg, &reg)?;
                let model = MtlModel::<f32>::build(&cfg, &reg, &mut |_, shape, _| Ok(Tensor::zeros(shape)))?;
                let sum = |pat: &str| -> u64 {
                    model
                        .params
                        .iter()
                        .filter(|(_, name, _)| name.contains(pat))
                        .map(|(_, _, t)| t.len() as u64)
                        .sum()
                };
                ok &= report.gating_params == sum(".gates.");
                ok &= report.expert_params == sum(".experts.") + sum(".ffn.");
                ok &= report.total == model.params.num_elements() as u64;
                checked += 1;
            }
        }
    }
    Ok((
        ok,
        format!(
            "{} gating parameters at L=6 H=384 N=4 T=8; {checked} grid configs enumerated",
            headline.gating_params
        ),
    ))
}

fn flops_parity(_: &mut Runs) -> Outcome {
    let dense = flops_per_token(&minilm(Variant::Dense, 6, 1, 8, 30522), 3);
    let mut ok = true;
    for n in [1, 2, 4, 6] {
        for variant in [Variant::TaskGate, Variant::SharedGate] {
            let r = flops_per_token(&minilm(variant, 6, n, 8, 30522), 3);
            ok &= r.model.ffn == dense.model.ffn && r.model.attention == dense.model.attention;
            ok &= r.model.gate == 6 * n as u64 * 384;
        }
    }
    let reference = flops_per_token(&minilm(Variant::TaskGate, 6, 4, 8, 30522), 3);
    let fraction = reference.gate_fraction();
    ok &= fraction < 0.005;
    Ok((
        ok,
        format!(
            "FFN path {} MACs/token for every N; gate overhead {:.4}%",
            dense.model.ffn,
            100.0 * fraction
        ),
    ))
}

fn single_expert_collapse(_: &mut Runs) -> Outcome {
    let reg = registry(2);
    let dense_cfg = EncoderConfig {
        vocab_size: 50,
        ..EncoderConfig::tiny(Variant::Dense, 1, 2)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dense: MtlModel<f32> = fresh_init(&dense_cfg, &reg, &mut rng)?;
    let mut equal = 0;
    for variant in [Variant::TaskGate, Variant::SharedGate] {
        let cfg = EncoderConfig {
            variant,
            ..dense_cfg.clone()
        };
        let sparse = init_from_dense((&dense).into(), &cfg, &reg, &mut rng)?;
        for i in 0..100 {
            let len = rng.random_range(1..=dense_cfg.max_seq_len);
            let batch = TokenBatch::single((0..len).map(|_| rng.random_range(0..dense_cfg.vocab_size)).collect());
            let task = i % 2;
            let run = |m: &MtlModel<f32>| -> anyhow::Result<(Tensor<f32>, Tensor<f32>)> {
                let mut g = Graph::new();
                let (out, logits) = m.forward_head(&mut g, &batch, task, false, &mut ChaCha8Rng::seed_from_u64(0))?;
                Ok((g.value(out.sequence).clone(), g.value(logits).clone()))
            };
            let (ds, dl) = run(&dense)?;
            let (ss, sl) = run(&sparse)?;
            equal += usize::from(ds.bit_eq(&ss) && dl.bit_eq(&sl));
        }
    }
    Ok((
        equal == 200,
        format!("{equal}/200 inputs bitwise equal (task and shared gate, N=1)"),
    ))
}

fn replicated_init(_: &mut Runs) -> Outcome {
    let reg = registry(3);
    let dense_cfg = EncoderConfig::tiny(Variant::Dense, 1, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dense: MtlModel<f32> = fresh_init(&dense_cfg, &reg, &mut rng)?;
    let cfg = EncoderConfig {
        variant: Variant::TaskGate,
        num_experts: 4,
        ..dense_cfg.clone()
    };
    let mut sparse = init_from_dense((&dense).into(), &cfg, &reg, &mut rng)?;
    // Spread the gates so that tokens actually pick different experts.
    for block in sparse.encoder.blocks.clone() {
        if let FfnParams::Sparse(moe) = &block.ffn {
            for gate in &moe.gates {
                for v in sparse.params.get_mut(gate.weight).data_mut() {
                    *v = rng.random::<f32>() * 2.0 - 1.0;
                }
            }
        }
    }
    let (mut expert_gap, mut forced_gap, mut distinct) = (0f64, 0f64, 0usize);
    for l in 0..cfg.num_layers {
        let FfnParams::Dense(dense_ffn) = dense.encoder.blocks[l].ffn else {
            anyhow::bail!("dense layer expected")
        };
        let FfnParams::Sparse(moe) = &sparse.encoder.blocks[l].ffn else {
            anyhow::bail!("MoE layer expected")
        };
        for task in 0..3 {
            let x = Tensor::<f32>::new(
                vec![32, cfg.hidden],
                (0..32 * cfg.hidden).map(|_| rng.random::<f32>() * 4.0 - 2.0).collect(),
            )?;
            let mut g = Graph::new();
            let xn = g.constant(x);
            let reference = expert_forward(&mut g, &dense.params, &dense_ffn, xn)?;
            let top1 = moe_layer_forward(&mut g, &sparse.params, moe, xn, task, Dispatch::Top1)?;
            let mut chosen: Vec<usize> = top1.decisions.iter().map(|d| d.expert_index).collect();
            chosen.sort_unstable();
            chosen.dedup();
            distinct = distinct.max(chosen.len());
            expert_gap = expert_gap.max(g.value(top1.expert_output).max_abs_diff(g.value(reference)));
            for _ in 0..4 {
                let choice: Vec<usize> = (0..32).map(|_| rng.random_range(0..4)).collect();
                let forced = moe_layer_forward(&mut g, &sparse.params, moe, xn, task, Dispatch::Forced(&choice))?;
                expert_gap = expert_gap.max(g.value(forced.expert_output).max_abs_diff(g.value(reference)));
                forced_gap = forced_gap.max(g.value(forced.output).max_abs_diff(g.value(top1.output)));
            }
        }
    }
    let ok = expert_gap <= 1e-6 && forced_gap <= 1e-6 && distinct > 1;
    Ok((
        ok,
        format!("max expert gap {expert_gap:.1e}, max reselection gap {forced_gap:.1e}, up to {distinct} experts used"),
    ))
}

fn gradient_correctness(_: &mut Runs) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    // (a) MoE layer with three experts under a scalar loss.
    let cfg = EncoderConfig {
        num_layers: 1,
        hidden: 4,
        ffn_inner: 6,
        num_heads: 1,
        max_seq_len: 8,
        vocab_size: 4,
        variant: Variant::TaskGate,
        num_experts: 3,
        num_tasks: 2,
        dropout_p: 0.0,
    };
    let mut moe_model: MtlModel<f64> = fresh_init(&cfg, &registry(2), &mut rng)?;
    let ids: Vec<_> = moe_model.params.ids().collect();
    for id in ids {
        let shape = moe_model.params.get(id).shape().to_vec();
        *moe_model.params.get_mut(id) = random_tensor(&mut rng, &shape, 0.8);
    }
    let FfnParams::Sparse(moe) = moe_model.encoder.blocks[0].ffn.clone() else {
        anyhow::bail!("MoE layer expected")
    };
    let x = moe_model.params.add("input", random_tensor(&mut rng, &[7, 4], 1.5));
    let target = random_tensor(&mut rng, &[7, 4], 1.0);
    let gate_a = moe.gates[1].weight;
    let a = grad_check_params(
        |g, p| {
            let xn = g.param(p, x);
            let out = moe_layer_forward(g, p, &moe, xn, 1, Dispatch::Top1)?;
            let t = g.constant(target.clone());
            let d = g.sub(out.output, t)?;
            let sq = g.mul(d, d)?;
            Ok(g.mean(sq))
        },
        &moe_model.params,
        1e-5,
    )?;
    let gate_grad_a = a.analytic[gate_a.index()]
        .data()
        .iter()
        .fold(0f64, |m, v| m.max(v.abs()));

    // (b) softmax with the scaled cross-entropy.
    let labels = [0usize, 2, 1, 4, 3];
    let logits = random_tensor(&mut rng, &[5, 5], 2.0);
    let b = grad_check(|g, xs| classification_loss(g, xs[0], &labels), &[logits], 1e-5)?;

    // (c) one transformer block with H = 8.
    let block_cfg = EncoderConfig {
        hidden: 8,
        ffn_inner: 16,
        num_heads: 2,
        num_experts: 2,
        num_tasks: 1,
        ..cfg
    };
    let mut block_model: MtlModel<f64> = fresh_init(&block_cfg, &registry(1), &mut rng)?;
    let block = block_model.encoder.blocks[0].clone();
    let FfnParams::Sparse(block_moe) = &block.ffn else {
        anyhow::bail!("MoE layer expected")
    };
    let gate_c = block_moe.gates[0].weight;
    *block_model.params.get_mut(gate_c) = random_tensor(&mut rng, &[2, 8], 1.0);
    let input = block_model.params.add("input", random_tensor(&mut rng, &[6, 8], 1.0));
    let weights = random_tensor(&mut rng, &[6, 8], 1.0);
    let batch = TokenBatch::new(vec![0; 6], vec![true, true, true, true, false, true], 2, 3)?;
    let c = grad_check_params(
        |g, p| {
            let xn = g.param(p, input);
            let (out, _) = transformer_block_forward(
                g,
                p,
                &block,
                xn,
                &batch,
                2,
                0,
                0.0,
                false,
                &mut ChaCha8Rng::seed_from_u64(0),
            )?;
            let w = g.constant(weights.clone());
            let prod = g.mul(out, w)?;
            Ok(g.sum(prod))
        },
        &block_model.params,
        // Larger step: the small attention gradients are roundoff-limited at 1e-5.
        1e-4,
    )?;
    let gate_grad_c = c.analytic[gate_c.index()]
        .data()
        .iter()
        .fold(0f64, |m, v| m.max(v.abs()));

    let worst = a.max_rel_error.max(b.max_rel_error).max(c.max_rel_error);
    let ok = worst < 1e-4 && gate_grad_a > 1e-8 && gate_grad_c > 1e-8;
    Ok((
        ok,
        format!(
            "rel err moe {:.1e}, loss {:.1e}, block {:.1e}; max |gate grad| {gate_grad_a:.1e} / {gate_grad_c:.1e}",
            a.max_rel_error, b.max_rel_error, c.max_rel_error
        ),
    ))
}

fn routing_invariants(_: &mut Runs) -> Outcome {
    let cfg = EncoderConfig {
        vocab_size: 200,
        ..EncoderConfig::tiny(Variant::TaskGate, 4, 2)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut model: MtlModel<f32> = fresh_init(&cfg, &registry(2), &mut rng)?;
    let gates: Vec<_> = model
        .params
        .iter()
        .filter(|(_, n, _)| n.contains(".gates."))
        .map(|(id, _, _)| id)
        .collect();
    for id in gates {
        for v in model.params.get_mut(id).data_mut() {
            *v = rng.random::<f32>() * 2.0 - 1.0;
        }
    }
    let (seq, per_batch, batches) = (25, 16, 25);
    let (mut tokens, mut evaluations, mut decisions, mut bad_sum, mut bad_max) = (0, 0, 0, 0, 0);
    let mut used = [0usize; 4];
    for b in 0..batches {
        let ids = (0..seq * per_batch)
            .map(|_| rng.random_range(0..cfg.vocab_size))
            .collect();
        let batch = TokenBatch::new(ids, vec![true; seq * per_batch], per_batch, seq)?;
        let mut g = Graph::new();
        let out = encoder_forward(&mut g, &model.params, &model.encoder, &batch, b % 2, false, &mut rng)?;
        tokens += batch.real_tokens();
        evaluations += out.expert_evaluations;
        for d in out.trace.layers.iter().flatten() {
            decisions += 1;
            used[d.expert_index] += 1;
            bad_sum += usize::from((d.probs.iter().sum::<f64>() - 1.0).abs() > 1e-6);
            let max = d.probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            bad_max += usize::from(d.gate_value != max || d.probs[d.expert_index] != max);
        }
    }
    let layers = cfg.num_layers;
    let ok = tokens == 10_000
        && evaluations == layers * tokens
        && decisions == layers * tokens
        && bad_sum == 0
        && bad_max == 0;
    Ok((
        ok,
        format!("{tokens} tokens x {layers} layers: {evaluations} expert evaluations, {bad_sum} bad sums, {bad_max} gate/max mismatches, usage {used:?}"),
    ))
}

fn loss_scaling(_: &mut Runs) -> Outcome {
    let mut worst = 0f64;
    for c in [2usize, 3, 5] {
        let labels: Vec<usize> = (0..10).map(|i| i % c).collect();
        let mut g32 = Graph::<f32>::new();
        let l = g32.constant(Tensor::zeros(&[10, c]));
        let loss32 = classification_loss(&mut g32, l, &labels)?;
        let mut g64 = Graph::<f64>::new();
        let l = g64.constant(Tensor::filled(&[10, c], 3.7));
        let loss64 = classification_loss(&mut g64, l, &labels)?;
        worst = worst
            .max((g32.value(loss32).item() as f64 - 1.0).abs())
            .max((g64.value(loss64).item() - 1.0).abs());
    }
    Ok((
        worst <= 1e-6,
        format!("max |loss - 1| = {worst:.1e} for C in {{2, 3, 5}}"),
    ))
}

fn sampling_fidelity(_: &mut Runs) -> Outcome {
    let sizes = [2_500usize, 3_700, 5_700, 8_500, 67_300, 105_000, 364_000, 393_000];
    let reg = TaskRegistry::new(
        sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| TaskSpec::classification(&format!("t{i}"), 2, n))
            .collect(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let draws = 100_000;
    let natural = sample_tasks(&reg, Sampling::Natural, draws, &mut rng)?;
    let largest = natural.iter().filter(|&&t| t == 7).count() as f64 / draws as f64;
    let uniform = sample_tasks(&reg, Sampling::Uniform, draws, &mut rng)?;
    let worst_uniform = (0..8)
        .map(|t| (uniform.iter().filter(|&&x| x == t).count() as f64 / draws as f64 - 0.125).abs())
        .fold(0f64, f64::max);
    let ok = (largest - 0.414).abs() <= 0.01 && worst_uniform <= 0.01;
    Ok((
        ok,
        format!("P(largest) = {largest:.4}; uniform max deviation {worst_uniform:.4}"),
    ))
}

fn mtl_transfer(runs: &mut Runs) -> Outcome {
    let desk = DeskScale::default();
    let multi: Vec<f64> = runs
        .task_gate_full()?
        .iter()
        .map(|o| o.history.last().and_then(|r| r.value("small")).unwrap_or(f64::NAN))
        .collect();
    let mut single = Vec::new();
    for (seed, setup) in runs.setups()?.iter().enumerate() {
        let mix = setup.subset(&["small"]);
        let out = train_variant(setup, &mix, Variant::Dense, &desk, seed as u64)?;
        single.push(out.history.last().and_then(|r| r.value("small")).unwrap_or(f64::NAN));
    }
    let (m, s) = (median(&multi), median(&single));
    Ok((
        m >= s,
        format!("small-task accuracy: task-gated mixture {m:.3} vs single-task {s:.3} (medians of {SEEDS})"),
    ))
}

fn gate_reuse(runs: &mut Runs) -> Outcome {
    let desk = DeskScale::default();
    runs.task_gate_full()?;
    let (mut related, mut unrelated, mut random) = (Vec::new(), Vec::new(), Vec::new());
    for (seed, (setup, trained)) in runs.setups.iter().zip(&runs.task_gate_full).enumerate() {
        let probes = setup.encode(&setup.probes, desk.max_seq_len);
        let probe = probes
            .iter()
            .find(|t| t.spec.name == "probe")
            .ok_or_else(|| anyhow::anyhow!("no probe task"))?;
        let seed = seed as u64;
        related.push(finetune_metric(
            &trained.model,
            probe,
            GateSource::Reuse("anchor".into()),
            &desk,
            seed,
        )?);
        unrelated.push(finetune_metric(
            &trained.model,
            probe,
            GateSource::Reuse("unrelated".into()),
            &desk,
            seed,
        )?);
        random.push(finetune_metric(&trained.model, probe, GateSource::Random, &desk, seed)?);
    }
    let (r, u, z) = (median(&related), median(&unrelated), median(&random));
    Ok((
        r >= u && r >= z,
        format!("probe accuracy: reuse related {r:.3}, reuse unrelated {u:.3}, random {z:.3}"),
    ))
}

/// Mean dev metric over the common tasks in the final record.
fn common_mean(outcome: &TrainOutcome, names: &[&str]) -> f64 {
    let last = outcome.history.last();
    names
        .iter()
        .map(|n| last.and_then(|r| r.value(n)).unwrap_or(f64::NAN))
        .sum::<f64>()
        / names.len() as f64
}

fn robustness(runs: &mut Runs) -> Outcome {
    let desk = DeskScale::default();
    runs.task_gate_full()?;
    let mut rows = Vec::new();
    for variant in [Variant::TaskGate, Variant::Dense] {
        let (mut with, mut without, mut with_acc, mut without_acc) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (seed, setup) in runs.setups.iter().enumerate() {
            let seed_u = seed as u64;
            let full = match variant {
                Variant::TaskGate => None,
                _ => Some(train_variant(setup, &setup.subset(&FULL), variant, &desk, seed_u)?),
            };
            let full = full.as_ref().unwrap_or(&runs.task_gate_full[seed]);
            let reduced = train_variant(setup, &setup.subset(&COMMON), variant, &desk, seed_u)?;
            with.push(common_mean(full, &COMMON));
            without.push(common_mean(&reduced, &COMMON));
            with_acc.push(common_mean(full, &COMMON[..2]));
            without_acc.push(common_mean(&reduced, &COMMON[..2]));
        }
        rows.push((
            variant,
            median(&without) - median(&with),
            median(&without_acc) - median(&with_acc),
        ));
    }
    let (tag, dense) = (rows[0], rows[1]);
    Ok((
        tag.1 < dense.1,
        format!(
            "common-task drop from adding the unrelated task: task gate {:+.4}, dense {:+.4} (classification only: {:+.4} vs {:+.4})",
            tag.1, dense.1, tag.2, dense.2
        ),
    ))
}

fn determinism(runs: &mut Runs) -> Outcome {
    let desk = DeskScale::default();
    runs.task_gate_full()?;
    let setup = &runs.setups[0];
    let rerun = train_variant(setup, &setup.subset(&FULL), Variant::TaskGate, &desk, 0)?;
    let first = &runs.task_gate_full[0];
    let csv_equal = metrics_csv(&first.history) == metrics_csv(&rerun.history);

    let dir = tempfile::tempdir()?;
    let path = dir.path().join(MANIFEST_FILE);
    save_checkpoint(&path, &first.model, Some(&first.optimizer))?;
    let loaded = load_checkpoint(&path)?.model;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut equal = 0;
    for i in 0..50 {
        let len = rng.random_range(1..=desk.max_seq_len);
        let batch = TokenBatch::single(
            (0..len)
                .map(|_| rng.random_range(0..first.model.config().vocab_size))
                .collect(),
        );
        let task = i % FULL.len();
        let run = |m: &MtlModel<f32>| -> anyhow::Result<Tensor<f32>> {
            let mut g = Graph::new();
            let (_, logits) = m.forward_head(&mut g, &batch, task, false, &mut ChaCha8Rng::seed_from_u64(0))?;
            Ok(g.value(logits).clone())
        };
        equal += usize::from(run(&first.model)?.bit_eq(&run(&loaded)?));
    }
    let params_equal = ParamSet::bit_eq(&first.model.params, &loaded.params);
    Ok((
        csv_equal && equal == 50 && params_equal,
        format!("metrics CSV identical: {csv_equal}; reloaded forward bitwise equal on {equal}/50 inputs"),
    ))
}

struct Criterion {
    number: usize,
    name: &'static str,
    budget: Duration,
    run: fn(&mut Runs) -> Outcome,
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let criteria = [
        Criterion {
            number: 1,
            name: "gating-parameter arithmetic",
            budget: secs(1),
            run: gating_arithmetic,
        },
        Criterion {
            number: 2,
            name: "FLOPs parity",
            budget: secs(1),
            run: flops_parity,
        },
        Criterion {
            number: 3,
            name: "single-expert collapse",
            budget: secs(10),
            run: single_expert_collapse,
        },
        Criterion {
            number: 4,
            name: "replicated-init equivalence",
            budget: secs(10),
            run: replicated_init,
        },
        Criterion {
            number: 5,
            name: "gradient correctness",
            budget: secs(60),
            run: gradient_correctness,
        },
        Criterion {
            number: 6,
            name: "routing invariants",
            budget: secs(30),
            run: routing_invariants,
        },
        Criterion {
            number: 7,
            name: "loss-scaling fixed point",
            budget: secs(1),
            run: loss_scaling,
        },
        Criterion {
            number: 8,
            name: "sampling fidelity",
            budget: secs(5),
            run: sampling_fidelity,
        },
        Criterion {
            number: 9,
            name: "multi-task transfer",
            budget: secs(15 * 60),
            run: mtl_transfer,
        },
        Criterion {
            number: 10,
            name: "gate-reuse ordering",
            budget: secs(10 * 60),
            run: gate_reuse,
        },
        Criterion {
            number: 11,
            name: "robustness to an unrelated task",
            budget: secs(20 * 60),
            run: robustness,
        },
        Criterion {
            number: 12,
            name: "determinism and persistence",
            budget: secs(5 * 60),
            run: determinism,
        },
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut runs = Runs::default();
    let mut failures = 0;
    for c in criteria
        .iter()
        .filter(|c| selected.is_empty() || selected.contains(&c.number))
    {
        let start = Instant::now();
        let result = (c.run)(&mut runs);
        let elapsed = start.elapsed();
        let (passed, detail) = match result {
            Ok((_, detail)) if elapsed > c.budget => (false, format!("{detail}; over the {:?} budget", c.budget)),
            Ok(r) => r,
            Err(e) => (false, format!("error: {e:#}")),
        };
        failures += usize::from(!passed);
        println!(
            "{} {:>2} {}: {detail} [{:.2}s]",
            if passed { "PASS" } else { "FAIL" },
            c.number,
            c.name,
            elapsed.as_secs_f64()
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
