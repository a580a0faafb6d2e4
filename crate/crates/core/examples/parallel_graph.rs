//! Build the execution graph of one iteration under tensor, pipeline and
//! hybrid parallelism and report its shape and latency.
//!
//! ```bash
//! cargo run --example parallel_graph
//! ```

use servesim::driver::{Simulation, SimulationConfig};
use servesim::graph::{CommOp, ParallelMode, ParallelismConfig};
use servesim::model::{BatchEntry, ModelConfig, Phase};
use servesim::scheduler::BatchPlan;

fn main() -> servesim::Result<()> {
    let plan = BatchPlan {
        members: (0..8)
            .map(|id| BatchEntry {
                id,
                phase: Phase::Initiation,
                prompt_len: 256,
                context_len: 256,
            })
            .collect(),
        loads: vec![],
    };
    println!("mode      groups  nodes  edges  allreduce  send  latency_ms");
    for (mode, groups) in [
        (ParallelMode::Tensor, 1),
        (ParallelMode::Pipeline, 8),
        (ParallelMode::Hybrid, 2),
        (ParallelMode::Hybrid, 4),
    ] {
        let cfg = SimulationConfig::new(
            ModelConfig::preset("gpt3-7b")?,
            ParallelismConfig::new(mode, 8, groups)?,
        );
        let mut sim = Simulation::new(cfg, vec![])?;
        let d = sim.simulate_batch(&plan, &[])?;
        println!(
            "{:<9} {:>6} {:>6} {:>6} {:>10} {:>5} {:>11.3}",
            mode.to_string(),
            groups,
            d.graph.len(),
            d.graph.edge_count(),
            d.graph.count_comm(CommOp::AllReduce),
            d.graph.count_comm(CommOp::Send),
            d.outcome.iteration_latency.as_millis_f64()
        );
    }

    let cfg = SimulationConfig::new(
        ModelConfig::preset("gpt2")?,
        ParallelismConfig::new(ParallelMode::Hybrid, 2, 2)?,
    );
    let mut sim = Simulation::new(cfg, vec![])?;
    let d = sim.simulate_batch(&plan, &[])?;
    println!("\nfirst nodes of a gpt2 graph on 2 stages:");
    for line in d.graph.dump().lines().take(12) {
        println!("  {line}");
    }
    Ok(())
}
