use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{MtlModel, RoutingTrace};
use crate::error::{Error, Result};
use crate::numerics::Graph;
use crate::tasks::TaskRegistry;
use crate::trainer::{make_sub_batch, EncodedExample, EVAL_BATCH};

/// Routing decisions of `examples` under `task_id` in evaluation mode.
pub fn trace_routing(model: &MtlModel<f32>, task_id: usize, examples: &[EncodedExample]) -> Result<RoutingTrace> {
    let mut trace = RoutingTrace {
        task_id,
        layers: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for chunk in examples.chunks(EVAL_BATCH) {
        let refs: Vec<&EncodedExample> = chunk.iter().collect();
        let sb = make_sub_batch(task_id, &refs)?;
        let mut g = Graph::new();
        let out = model.forward(&mut g, &sb.tokens, task_id, false, &mut rng)?;
        if trace.layers.is_empty() {
            trace.layers = vec![Vec::new(); out.trace.layers.len()];
        }
        for (acc, layer) in trace.layers.iter_mut().zip(out.trace.layers) {
            acc.extend(layer);
        }
    }
    Ok(trace)
}

/// Shannon entropy in bits.
pub fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.log2()).sum::<f64>()
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Expert-usage distribution of one task at one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskHistogram {
    pub task_id: usize,
    pub task: String,
    pub tokens: usize,
    pub frequencies: Vec<f64>,
    pub entropy_bits: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerRouting {
    pub layer: usize,
    pub histograms: Vec<TaskHistogram>,
    /// `(task id, task id, distance)` for every pair of traced tasks.
    pub pairwise_tv: Vec<(usize, usize, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoutingStats {
    pub num_experts: usize,
    pub layers: Vec<LayerRouting>,
}

impl RoutingStats {
    pub fn tv(&self, layer: usize, a: usize, b: usize) -> Option<f64> {
        self.layers
            .get(layer)?
            .pairwise_tv
            .iter()
            .find_map(|&(x, y, d)| ((x, y) == (a, b) || (x, y) == (b, a)).then_some(d))
    }

    /// Mean pairwise distance over layers between tasks `a` and `b`.
    pub fn mean_tv(&self, a: usize, b: usize) -> Option<f64> {
        let d: Vec<f64> = (0..self.layers.len()).filter_map(|l| self.tv(l, a, b)).collect();
        (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
    }
}

/// Per-layer, per-task histograms of the selected expert, their entropies
/// and pairwise total-variation distances.
pub fn routing_stats(traces: &[RoutingTrace], registry: &TaskRegistry, num_experts: usize) -> Result<RoutingStats> {
    let num_layers = traces.iter().map(|t| t.layers.len()).max().unwrap_or(0);
    if num_experts == 0 || num_layers == 0 || traces.iter().all(RoutingTrace::is_empty) {
        return Err(Error::Data("routing statistics need a non-empty trace".into()));
    }
    let mut layers = Vec::with_capacity(num_layers);
    for l in 0..num_layers {
        let mut histograms = Vec::new();
        for trace in traces {
            let Some(decisions) = trace.layers.get(l).filter(|d| !d.is_empty()) else {
                continue;
            };
            let mut counts = vec![0usize; num_experts];
            for d in decisions {
                *counts
                    .get_mut(d.expert_index)
                    .ok_or_else(|| Error::Data(format!("expert {} >= {num_experts}", d.expert_index)))? += 1;
            }
            let frequencies: Vec<f64> = counts.iter().map(|&c| c as f64 / decisions.len() as f64).collect();
            histograms.push(TaskHistogram {
                task_id: trace.task_id,
                task: registry
                    .get(trace.task_id)
                    .map(|t| t.name.clone())
                    .unwrap_or_else(|_| format!("task{}", trace.task_id)),
                tokens: decisions.len(),
                entropy_bits: entropy_bits(&frequencies),
                frequencies,
            });
        }
        let mut pairwise_tv = Vec::new();
        for (i, a) in histograms.iter().enumerate() {
            for b in &histograms[i + 1..] {
                pairwise_tv.push((a.task_id, b.task_id, total_variation(&a.frequencies, &b.frequencies)));
            }
        }
        layers.push(LayerRouting {
            layer: l,
            histograms,
            pairwise_tv,
        });
    }
    Ok(RoutingStats { num_experts, layers })
}

/// `layer,task,expert_0..,entropy_bits` rows, one per layer and task.
pub fn routing_csv(stats: &RoutingStats) -> String {
    let experts: Vec<String> = (0..stats.num_experts).map(|e| format!("expert_{e}")).collect();
    let mut out = format!("layer,task,{},entropy_bits\n", experts.join(","));
    for layer in &stats.layers {
        for h in &layer.histograms {
            let f: Vec<String> = h.frequencies.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&format!(
                "{},{},{},{:?}\n",
                layer.layer,
                h.task,
                f.join(","),
                h.entropy_bits
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::RoutingDecision;
    use crate::tasks::TaskSpec;
    use proptest::prelude::*;

    fn decision(e: usize) -> RoutingDecision {
        RoutingDecision {
            logits: vec![],
            probs: vec![],
            expert_index: e,
            gate_value: 1.0,
        }
    }

    fn trace(task_id: usize, experts: &[usize]) -> RoutingTrace {
        RoutingTrace {
            task_id,
            layers: vec![experts.iter().map(|&e| decision(e)).collect()],
        }
    }

    fn registry() -> TaskRegistry {
        TaskRegistry::new(vec![
            TaskSpec::classification("a", 2, 1),
            TaskSpec::classification("b", 2, 1),
        ])
        .unwrap()
    }

    #[test]
    fn concentrated_and_uniform_routing() {
        let s = routing_stats(&[trace(0, &[0; 10]), trace(1, &[0, 1, 2, 3])], &registry(), 4).unwrap();
        let h = &s.layers[0].histograms;
        assert_eq!(h[0].frequencies, [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(h[0].entropy_bits, 0.0);
        assert!((h[1].entropy_bits - 2.0).abs() < 1e-12);
        assert!((s.tv(0, 0, 1).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(routing_csv(&s).lines().count(), 3);
        assert!(routing_stats(&[], &registry(), 4).is_err());
    }

    proptest! {
        #[test]
        fn histograms_are_distributions_and_permute(experts in prop::collection::vec(0usize..4, 1..60), shift in 1usize..4) {
            let s = routing_stats(&[trace(0, &experts)], &registry(), 4).unwrap();
            let f = &s.layers[0].histograms[0].frequencies;
            prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let relabeled: Vec<usize> = experts.iter().map(|e| (e + shift) % 4).collect();
            let r = routing_stats(&[trace(0, &relabeled)], &registry(), 4).unwrap();
            let g = &r.layers[0].histograms[0].frequencies;
            for e in 0..4 {
                prop_assert_eq!(f[e], g[(e + shift) % 4]);
            }
        }
    }
}
