//! Trains on tab-separated files described by a mixture manifest, the
//! same format `moe-mtl train` reads through the `mixture` key.
//!
//! `cargo run --release --example custom_data`

use std::fs;

use moe_mtl::encoder::{fresh_init, EncoderConfig, Variant};
use moe_mtl::tasks::{build_vocab, load_mixture};
use moe_mtl::trainer::{encode_mixture, metrics_csv, mtl_train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MANIFEST: &str = r#"
[[task]]
name = "polarity"
formulation = "single_text_classification"
num_classes = 2
metric = "accuracy"
train = "polarity.train.tsv"
dev = "polarity.dev.tsv"

[[task]]
name = "overlap"
formulation = "pairwise_text_regression"
num_classes = 1
metric = "spearman"
train = "overlap.train.tsv"
dev = "overlap.dev.tsv"
score_range = [0.0, 5.0]
"#;

fn main() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join(format!("moe-mtl-custom-{}", std::process::id()));
    fs::create_dir_all(&dir)?;
    let good = ["bright", "warm", "kind", "calm"];
    let bad = ["grey", "cold", "harsh", "loud"];
    let mut polarity = String::from("text_a\ttext_b\tlabel\n");
    let mut overlap = String::from("text_a\ttext_b\tlabel\n");
    for i in 0..64 {
        let (w, label) = if i % 2 == 0 { (good[i % 4], 1) } else { (bad[i % 4], 0) };
        polarity += &format!("a {w} morning\t\t{label}\n");
        let shared = i % 6;
        let a: Vec<&str> = (0..5).map(|k| good[(i + k) % 4]).collect();
        let b: Vec<&str> = (0..5)
            .map(|k| if k < shared.min(5) { a[k] } else { bad[(i + k) % 4] })
            .collect();
        overlap += &format!("{}\t{}\t{}\n", a.join(" "), b.join(" "), shared.min(5));
    }
    for (name, body) in [("polarity", &polarity), ("overlap", &overlap)] {
        fs::write(dir.join(format!("{name}.train.tsv")), body)?;
        fs::write(dir.join(format!("{name}.dev.tsv")), body)?;
    }
    fs::write(dir.join("mixture.toml"), MANIFEST)?;

    let mix = load_mixture(&dir.join("mixture.toml"))?;
    let vocab = build_vocab(&mix.train_texts(), 1000)?;
    let registry = mix.registry()?;
    let cfg = EncoderConfig {
        vocab_size: vocab.len(),
        num_tasks: registry.len(),
        ..EncoderConfig::tiny(Variant::TaskGate, 2, registry.len())
    };
    let model = fresh_init(&cfg, &registry, &mut ChaCha8Rng::seed_from_u64(0))?.with_vocab(vocab.clone());
    let tasks = encode_mixture(&mix, &vocab, cfg.max_seq_len);
    let train = TrainConfig {
        batch_size: 8,
        subbatches: 2,
        total_steps: 200,
        peak_lr: 1e-3,
        eval_interval: 50,
        ..TrainConfig::default()
    };
    let out = mtl_train(model, &tasks, &train)?;
    print!("{}", metrics_csv(&out.history));
    fs::remove_dir_all(&dir)?;
    Ok(())
}
