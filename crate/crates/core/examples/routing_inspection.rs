//! Expert usage on two tasks with opposite labelling rules. Per-task
//! gates can send the tasks to different experts; a shared gate cannot
//! tell them apart.
//!
//! `cargo run --release --example routing_inspection -- [steps]`

use moe_mtl::analysis::{routing_csv, routing_stats, trace_routing};
use moe_mtl::encoder::Variant;
use moe_mtl::experiments::{train_variant, DeskScale, SyntheticSetup};
use moe_mtl::trainer::TrainConfig;

fn main() -> anyhow::Result<()> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1000);
    let setup = SyntheticSetup::new("conflict-v1", 0)?;
    let desk = DeskScale {
        train: TrainConfig {
            total_steps: steps,
            eval_interval: steps.max(1),
            ..DeskScale::default().train
        },
        ..DeskScale::default()
    };
    let tasks = setup.encode(&setup.mixture, desk.max_seq_len);
    for variant in [Variant::TaskGate, Variant::SharedGate] {
        let model = train_variant(&setup, &setup.mixture, variant, &desk, 0)?.model;
        let traces = (0..tasks.len())
            .map(|t| trace_routing(&model, t, &tasks[t].dev))
            .collect::<Result<Vec<_>, _>>()?;
        let stats = routing_stats(&traces, &model.registry, model.config().num_experts)?;
        println!(
            "{}: mean total variation between tasks {:.3}",
            variant.as_str(),
            stats.mean_tv(0, 1).unwrap_or(0.0)
        );
        println!("{}", routing_csv(&stats));
    }
    Ok(())
}
