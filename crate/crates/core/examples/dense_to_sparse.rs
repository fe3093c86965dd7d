//! Upcycling: a trained dense encoder becomes a task-gated MoE encoder
//! whose experts start as copies of the dense FFN. With one expert the
//! sparse model reproduces the dense one bit for bit.
//!
//! `cargo run --release --example dense_to_sparse`

use moe_mtl::encoder::{init_from_dense, EncoderConfig, MtlModel, TokenBatch, Variant};
use moe_mtl::experiments::{train_variant, DeskScale, SyntheticSetup};
use moe_mtl::numerics::{Graph, Tensor};
use moe_mtl::trainer::{evaluate, mtl_train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn logits(model: &MtlModel<f32>, batch: &TokenBatch, task: usize) -> anyhow::Result<Tensor<f32>> {
    let mut g = Graph::new();
    let (_, out) = model.forward_head(&mut g, batch, task, false, &mut ChaCha8Rng::seed_from_u64(0))?;
    Ok(g.value(out).clone())
}

fn main() -> anyhow::Result<()> {
    let setup = SyntheticSetup::new("four-task-v1", 1)?;
    let mix = setup.subset(&["anchor", "small", "unrelated"]);
    let short = TrainConfig {
        total_steps: 300,
        eval_interval: 300,
        ..DeskScale::default().train
    };
    let desk = DeskScale {
        train: short.clone(),
        ..DeskScale::default()
    };
    let dense = train_variant(&setup, &mix, Variant::Dense, &desk, 1)?.model;
    let tasks = setup.encode(&mix, desk.max_seq_len);
    let mut rng = ChaCha8Rng::seed_from_u64(2);

    let single = EncoderConfig {
        variant: Variant::TaskGate,
        ..dense.config().clone()
    };
    let collapsed = init_from_dense((&dense).into(), &single, &dense.registry, &mut rng)?;
    let probe = TokenBatch::single(tasks[0].dev[0].ids.clone());
    println!(
        "one expert, dense vs sparse logits bitwise equal: {}",
        logits(&dense, &probe, 0)?.bit_eq(&logits(&collapsed, &probe, 0)?)
    );

    let four = EncoderConfig {
        num_experts: 4,
        ..single
    };
    let sparse = init_from_dense((&dense).into(), &four, &dense.registry, &mut rng)?;
    for (t, task) in tasks.iter().enumerate() {
        println!(
            "{:<10} dense {:.3}  upcycled {:.3}",
            task.spec.name,
            evaluate(&dense, t, &task.dev)?,
            evaluate(&sparse, t, &task.dev)?
        );
    }
    let tuned = mtl_train(sparse, &tasks, &TrainConfig { seed: 3, ..short })?;
    for (t, task) in tasks.iter().enumerate() {
        println!(
            "{:<10} after 300 more steps {:.3}",
            task.spec.name,
            evaluate(&tuned.model, t, &task.dev)?
        );
    }
    Ok(())
}
