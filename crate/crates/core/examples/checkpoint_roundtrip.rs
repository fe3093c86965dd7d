//! Saves a trained model with its optimiser state and reloads it. The
//! manifest is plain TOML next to a little-endian f32 blob.
//!
//! `cargo run --release --example checkpoint_roundtrip`

use moe_mtl::checkpoint::{load_checkpoint, save_checkpoint, MANIFEST_FILE};
use moe_mtl::encoder::Variant;
use moe_mtl::experiments::{train_variant, DeskScale, SyntheticSetup};
use moe_mtl::trainer::{evaluate, TrainConfig};

fn main() -> anyhow::Result<()> {
    let setup = SyntheticSetup::new("four-task-v1", 0)?;
    let mix = setup.subset(&["small", "score"]);
    let desk = DeskScale {
        train: TrainConfig {
            total_steps: 100,
            eval_interval: 100,
            ..DeskScale::default().train
        },
        ..DeskScale::default()
    };
    let trained = train_variant(&setup, &mix, Variant::TaskGate, &desk, 0)?;

    let dir = std::env::temp_dir().join(format!("moe-mtl-checkpoint-{}", std::process::id()));
    let path = dir.join(MANIFEST_FILE);
    save_checkpoint(&path, &trained.model, Some(&trained.optimizer))?;
    let manifest = std::fs::read_to_string(&path)?;
    println!(
        "manifest head:\n{}",
        manifest.lines().take(12).collect::<Vec<_>>().join("\n")
    );

    let restored = load_checkpoint(&dir)?;
    let tasks = setup.encode(&mix, desk.max_seq_len);
    for (t, task) in tasks.iter().enumerate() {
        let before = evaluate(&trained.model, t, &task.dev)?;
        let after = evaluate(&restored.model, t, &task.dev)?;
        println!("{:<6} {:.4} -> {:.4}", task.spec.name, before, after);
    }
    println!(
        "parameters identical: {}",
        restored.model.params.bit_eq(&trained.model.params)
    );
    println!("optimizer step restored: {:?}", restored.optimizer.map(|o| o.step));
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
