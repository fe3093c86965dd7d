use moe_mtl::analysis::{
    count_model_params, count_params, entropy_bits, flops_per_token, routing_csv, routing_stats, total_variation,
    trace_routing,
};
use moe_mtl::encoder::{fresh_init, EncoderConfig, MtlModel, Variant};
use moe_mtl::numerics::Tensor;
use moe_mtl::tasks::Label;
use moe_mtl::tasks::{TaskRegistry, TaskSpec};
use moe_mtl::trainer::EncodedExample;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn registry(t: usize) -> TaskRegistry {
    TaskRegistry::new(
        (0..t)
            .map(|i| {
                if i % 3 == 2 {
                    TaskSpec::regression(&format!("t{i}"), 100)
                } else {
                    TaskSpec::classification(&format!("t{i}"), 2 + i % 2, 100)
                }
            })
            .collect(),
    )
    .unwrap()
}

fn config(variant: Variant, layers: usize, experts: usize, tasks: usize) -> EncoderConfig {
    EncoderConfig {
        num_layers: layers,
        hidden: 12,
        ffn_inner: 20,
        num_heads: 3,
        max_seq_len: 10,
        vocab_size: 17,
        variant,
        num_experts: experts,
        num_tasks: tasks,
        dropout_p: 0.1,
    }
}

#[test]
fn closed_forms_match_instantiated_models_over_the_grid() {
    for n in [1, 2, 4, 6] {
        for l in [1, 2, 6] {
            for variant in [Variant::TaskGate, Variant::SharedGate] {
                let t = 3;
                let cfg = config(variant, l, n, t);
                let reg = registry(t);
                let report = count_params(&cfg, &reg).unwrap();
                let (h, f) = (12u64, 20u64);
                let gates = if variant == Variant::TaskGate { t as u64 } else { 1 };
                assert_eq!(report.gating_params, l as u64 * n as u64 * h * gates);
                assert_eq!(
                    report.additional_expert_params,
                    l as u64 * (n as u64 - 1) * (2 * h * f + f + h)
                );
                let m: MtlModel<f32> = fresh_init(&cfg, &reg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
                assert_eq!(report.total, m.params.num_elements() as u64);
                assert_eq!(count_model_params(&m).unwrap(), report);

                let dense = count_params(&cfg.with_variant(Variant::Dense), &reg).unwrap();
                assert_eq!(
                    report.total - dense.total,
                    report.additional_expert_params + report.gating_params
                );
            }
        }
    }
}

#[test]
fn gating_grows_linearly_with_tasks_and_experts_do_not() {
    let counts: Vec<_> = (1..=5)
        .map(|t| count_params(&config(Variant::TaskGate, 2, 4, t), &registry(t)).unwrap())
        .collect();
    for w in counts.windows(2) {
        assert_eq!(w[1].gating_params - w[0].gating_params, counts[0].gating_params);
        assert_eq!(w[1].expert_params, w[0].expert_params);
    }
}

#[test]
fn active_path_cost_is_independent_of_expert_count() {
    let base = flops_per_token(&config(Variant::Dense, 2, 1, 3), 2);
    for n in [1, 2, 4, 8] {
        for variant in [Variant::TaskGate, Variant::SharedGate] {
            let r = flops_per_token(&config(variant, 2, n, 3), 2);
            assert_eq!(r.model.ffn, base.model.ffn);
            assert_eq!(r.model.attention, base.model.attention);
            assert_eq!(r.model.gate, 2 * n as u64 * 12);
            assert_eq!(r.dense_equivalent, base.model);
        }
    }
}

fn examples(rng: &mut ChaCha8Rng, count: usize, vocab: usize) -> Vec<EncodedExample> {
    (0..count)
        .map(|_| {
            let len = rng.random_range(2..8);
            EncodedExample {
                ids: (0..len).map(|_| rng.random_range(0..vocab)).collect(),
                label: Label::Class(0),
            }
        })
        .collect()
}

#[test]
fn zero_gates_send_every_token_to_the_first_expert() {
    let cfg = config(Variant::TaskGate, 2, 4, 2);
    let mut m: MtlModel<f32> = fresh_init(&cfg, &registry(2), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let gates: Vec<_> = m
        .params
        .iter()
        .filter(|(_, n, _)| n.contains(".gates."))
        .map(|(id, _, _)| id)
        .collect();
    for id in gates {
        let shape = m.params.get(id).shape().to_vec();
        *m.params.get_mut(id) = Tensor::zeros(&shape);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ex = examples(&mut rng, 30, cfg.vocab_size);
    let real: usize = ex.iter().map(|e| e.ids.len()).sum();
    let trace = trace_routing(&m, 1, &ex).unwrap();
    assert_eq!(trace.len(), cfg.num_layers * real);
    assert!(trace
        .layers
        .iter()
        .flatten()
        .all(|d| d.expert_index == 0 && (d.gate_value - 0.25).abs() < 1e-7));
    let stats = routing_stats(&[trace], &m.registry, 4).unwrap();
    for layer in &stats.layers {
        assert_eq!(layer.histograms[0].frequencies, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(layer.histograms[0].entropy_bits, 0.0);
    }
    let csv = routing_csv(&stats);
    assert_eq!(
        csv.lines().next().unwrap(),
        "layer,task,expert_0,expert_1,expert_2,expert_3,entropy_bits"
    );
    assert_eq!(csv.lines().count(), 1 + cfg.num_layers);
}

#[test]
fn task_histograms_and_distances_are_consistent() {
    let cfg = config(Variant::TaskGate, 2, 3, 2);
    let mut m: MtlModel<f32> = fresh_init(&cfg, &registry(2), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let gates: Vec<_> = m
        .params
        .iter()
        .filter(|(_, n, _)| n.contains(".gates."))
        .map(|(id, _, _)| id)
        .collect();
    for id in gates {
        for v in m.params.get_mut(id).data_mut() {
            *v = rng.random::<f32>() * 8.0 - 4.0;
        }
    }
    let ex = examples(&mut rng, 40, cfg.vocab_size);
    let traces = vec![trace_routing(&m, 0, &ex).unwrap(), trace_routing(&m, 1, &ex).unwrap()];
    let stats = routing_stats(&traces, &m.registry, 3).unwrap();
    for (l, layer) in stats.layers.iter().enumerate() {
        for h in &layer.histograms {
            assert!((h.frequencies.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(h.entropy_bits >= 0.0 && h.entropy_bits <= 3f64.log2() + 1e-12);
        }
        let d = stats.tv(l, 0, 1).unwrap();
        assert_eq!(d, stats.tv(l, 1, 0).unwrap());
        assert_eq!(
            d,
            total_variation(&layer.histograms[0].frequencies, &layer.histograms[1].frequencies)
        );
    }
    assert!(stats.mean_tv(0, 1).is_some());
}

proptest! {
    #[test]
    fn distances_are_bounded_metrics(raw in proptest::collection::vec((0.01f64..1.0, 0.01f64..1.0, 0.01f64..1.0), 2..8)) {
        let norm = |v: Vec<f64>| { let s: f64 = v.iter().sum(); v.into_iter().map(|x| x / s).collect::<Vec<_>>() };
        let p = norm(raw.iter().map(|r| r.0).collect());
        let q = norm(raw.iter().map(|r| r.1).collect());
        let r = norm(raw.iter().map(|r| r.2).collect());
        let (pq, qr, pr) = (total_variation(&p, &q), total_variation(&q, &r), total_variation(&p, &r));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&pq));
        prop_assert!(pr <= pq + qr + 1e-12);
        prop_assert_eq!(total_variation(&p, &p), 0.0);
        prop_assert!(entropy_bits(&p) <= (p.len() as f64).log2() + 1e-9);
    }
}
