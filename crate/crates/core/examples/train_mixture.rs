//! Joint training of the three encoder variants on the synthetic
//! four-task mixture, printing each task's final dev metric.
//!
//! `cargo run --release --example train_mixture -- [steps] [seed]`

use moe_mtl::analysis::{count_model_params, text_table};
use moe_mtl::encoder::Variant;
use moe_mtl::experiments::{train_variant, DeskScale, SyntheticSetup};
use moe_mtl::trainer::TrainConfig;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps: usize = args.first().map(|s| s.parse()).transpose()?.unwrap_or(500);
    let seed: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(0);

    let setup = SyntheticSetup::new("four-task-v1", seed)?;
    let desk = DeskScale {
        train: TrainConfig {
            total_steps: steps,
            eval_interval: steps.max(1),
            ..DeskScale::default().train
        },
        ..DeskScale::default()
    };
    let names: Vec<String> = setup.mixture.tasks.iter().map(|t| t.spec.name.clone()).collect();
    let mut rows = Vec::new();
    for variant in [Variant::Dense, Variant::SharedGate, Variant::TaskGate] {
        let out = train_variant(&setup, &setup.mixture, variant, &desk, seed)?;
        let mut row = vec![
            variant.as_str().to_string(),
            count_model_params(&out.model)?.total.to_string(),
        ];
        match out.history.last() {
            Some(r) => row.extend(names.iter().map(|n| format!("{:.3}", r.value(n).unwrap_or(f64::NAN)))),
            None => row.extend(names.iter().map(|_| "-".to_string())),
        }
        rows.push(row);
    }
    let mut headers = vec!["variant", "params"];
    headers.extend(names.iter().map(String::as_str));
    println!("{steps} steps, seed {seed}\n");
    print!("{}", text_table(&headers, &rows));
    Ok(())
}
