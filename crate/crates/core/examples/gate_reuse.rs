//! Two-stage training: joint training with per-task gates, then
//! fine-tuning a held-out task whose gate starts from a related task, an
//! unrelated task, or random values.
//!
//! `cargo run --release --example gate_reuse -- [steps] [seed]`

use moe_mtl::analysis::compare_gate_sources;
use moe_mtl::encoder::Variant;
use moe_mtl::experiments::{train_variant, DeskScale, SyntheticSetup};
use moe_mtl::trainer::{FinetuneConfig, GateSource, TrainConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps: usize = args.first().map(|s| s.parse()).transpose()?.unwrap_or(1000);
    let seed: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(0);

    let setup = SyntheticSetup::new("four-task-v1", seed)?;
    let desk = DeskScale::default();
    let train = TrainConfig {
        total_steps: steps,
        eval_interval: steps.max(1),
        ..desk.train.clone()
    };
    let stage_one = train_variant(
        &setup,
        &setup.mixture,
        Variant::TaskGate,
        &DeskScale { train, ..desk.clone() },
        seed,
    )?;

    let sources: Vec<GateSource> = ["anchor", "unrelated", "random"]
        .iter()
        .map(|s| s.parse())
        .collect::<Result<_, _>>()?;
    let finetune = FinetuneConfig {
        seed,
        ..desk.finetune.clone()
    };
    for probe in setup.encode(&setup.probes, desk.max_seq_len) {
        let cmp = compare_gate_sources(&stage_one.model, &probe, &sources, &finetune)?;
        println!(
            "held-out task `{}` ({} training examples)",
            probe.spec.name,
            probe.train.len()
        );
        println!("{}", cmp.table(probe.spec.metric.as_str()));
    }
    Ok(())
}
