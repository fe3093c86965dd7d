//! Central-difference check of the reverse-mode gradients of a top-1 MoE
//! layer, including the gradient that reaches the gate through the
//! selected expert's probability.
//!
//! `cargo run --example gradient_check`

use moe_mtl::encoder::{fresh_init, moe_layer_forward, Dispatch, EncoderConfig, FfnParams, MtlModel, Variant};
use moe_mtl::numerics::{grad_check_params, Tensor};
use moe_mtl::tasks::{TaskRegistry, TaskSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = EncoderConfig {
        num_layers: 1,
        hidden: 6,
        ffn_inner: 10,
        num_heads: 2,
        max_seq_len: 8,
        vocab_size: 8,
        variant: Variant::TaskGate,
        num_experts: 3,
        num_tasks: 2,
        dropout_p: 0.0,
    };
    let registry = TaskRegistry::new(vec![
        TaskSpec::classification("a", 2, 10),
        TaskSpec::classification("b", 3, 10),
    ])?;
    let mut model: MtlModel<f64> = fresh_init(&cfg, &registry, &mut rng)?;
    let FfnParams::Sparse(layer) = model.encoder.blocks[0].ffn.clone() else {
        unreachable!()
    };
    let gate = layer.gates[1].weight;
    *model.params.get_mut(gate) = Tensor::new(vec![3, 6], (0..18).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())?;
    let x = model.params.add(
        "x",
        Tensor::new(vec![5, 6], (0..30).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())?,
    );

    let report = grad_check_params(
        |g, p| {
            let xn = g.param(p, x);
            let out = moe_layer_forward(g, p, &layer, xn, 1, Dispatch::Top1)?;
            let sq = g.mul(out.output, out.output)?;
            Ok(g.sum(sq))
        },
        &model.params,
        1e-5,
    )?;
    println!(
        "{} elements checked, max relative error {:.2e}",
        report.elements_checked, report.max_rel_error
    );
    println!("gate gradient for task 1:");
    for row in report.analytic[gate.index()].data().chunks(6) {
        println!(
            "  {}",
            row.iter().map(|v| format!("{v:+.2e}")).collect::<Vec<_>>().join(" ")
        );
    }
    Ok(())
}
