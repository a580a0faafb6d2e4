//! Profile one mixed prefill/decode iteration of GPT3-7B and time each
//! operator on the default NPU and PIM.
//!
//! ```bash
//! cargo run --example operator_roofline
//! ```

use servesim::engine::{simulate_operator, DeviceConfig, NpuConfig, PimConfig};
use servesim::model::{profile_operators, BatchEntry, ModelConfig, Phase};

fn main() -> servesim::Result<()> {
    let model = ModelConfig::preset("gpt3-7b")?;
    let batch = [
        BatchEntry {
            id: 0,
            phase: Phase::Initiation,
            prompt_len: 128,
            context_len: 128,
        },
        BatchEntry {
            id: 1,
            phase: Phase::Generation,
            prompt_len: 0,
            context_len: 1024,
        },
    ];
    let profile = profile_operators(&model, &batch)?;
    let npu = DeviceConfig::Npu(NpuConfig::default());
    let pim = DeviceConfig::Pim(PimConfig::default());

    println!(
        "{:<10} {:>6} {:>6} {:>6} {:>8} {:>12} {:>10}  bound",
        "op", "m", "k", "n", "AI", "flops", "npu_us"
    );
    let attention = profile
        .per_request_attention
        .iter()
        .flat_map(|a| [&a.score, &a.attend]);
    for op in profile.batched_ops.iter().chain(attention) {
        let r = simulate_operator(op, &npu)?;
        let label = match op.attention_id {
            Some(id) => format!("{}#{id}", op.kind),
            None => op.kind.to_string(),
        };
        println!(
            "{:<10} {:>6} {:>6} {:>6} {:>8.2} {:>12} {:>10.2}  {:?}",
            label,
            op.m,
            op.k,
            op.n,
            op.arithmetic_intensity(),
            op.flops,
            r.latency * 1e6,
            r.bound
        );
        if op.is_gemv() && op.kind.is_attention() {
            let p = simulate_operator(op, &pim)?;
            println!("{:<10} on PIM: {:.2} us", "", p.latency * 1e6);
        }
    }
    println!(
        "iteration: {:.3} GFLOP over {} layers",
        profile.total_flops() as f64 / 1e9,
        profile.num_layers
    );
    Ok(())
}
