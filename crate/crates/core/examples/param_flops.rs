//! Parameter and per-token compute accounting for a six-layer,
//! 384-wide encoder with eight tasks, dense versus four experts.
//!
//! `cargo run --example param_flops`

use moe_mtl::analysis::{count_params, flops_per_token, text_table};
use moe_mtl::encoder::{EncoderConfig, Variant};
use moe_mtl::tasks::{TaskRegistry, TaskSpec};

fn main() -> anyhow::Result<()> {
    let registry = TaskRegistry::new(
        (0..8)
            .map(|i| {
                if i == 7 {
                    TaskSpec::regression("similarity", 5_700)
                } else {
                    TaskSpec::classification(&format!("task{i}"), 2, 10_000)
                }
            })
            .collect(),
    )?;
    let base = EncoderConfig {
        num_layers: 6,
        hidden: 384,
        ffn_inner: 1536,
        num_heads: 12,
        max_seq_len: 512,
        vocab_size: 30_522,
        variant: Variant::Dense,
        num_experts: 1,
        num_tasks: registry.len(),
        dropout_p: 0.1,
    };
    let mut rows = Vec::new();
    for (variant, n) in [(Variant::Dense, 1), (Variant::SharedGate, 4), (Variant::TaskGate, 4)] {
        let cfg = EncoderConfig {
            variant,
            num_experts: n,
            ..base.clone()
        };
        let p = count_params(&cfg, &registry)?;
        let f = flops_per_token(&cfg, 2);
        rows.push(vec![
            variant.as_str().to_string(),
            p.total.to_string(),
            p.additional_expert_params.to_string(),
            p.gating_params.to_string(),
            f.model.ffn.to_string(),
            format!("{:.3}%", 100.0 * f.gate_fraction()),
        ]);
    }
    print!(
        "{}",
        text_table(
            &[
                "variant",
                "total",
                "extra experts",
                "gating",
                "FFN MACs/token",
                "gate overhead"
            ],
            &rows
        )
    );
    let tag = EncoderConfig {
        variant: Variant::TaskGate,
        num_experts: 4,
        ..base
    };
    println!("\ntask-gated breakdown\n{}", count_params(&tag, &registry)?.table());
    Ok(())
}
