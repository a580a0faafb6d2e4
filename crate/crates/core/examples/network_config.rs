//! Parse a network description with a slow link override and see how it
//! changes a tensor-parallel iteration.
//!
//! ```bash
//! cargo run --example network_config
//! ```

use servesim::driver::{Simulation, SimulationConfig};
use servesim::graph::{ParallelMode, ParallelismConfig};
use servesim::model::{BatchEntry, ModelConfig, Phase};
use servesim::scheduler::BatchPlan;
use servesim::syssim::NetworkConfig;

const NETWORK: &str = r#"
npus = 4
link_bw_GBps = 64
link_latency_ns = 100

[[link]]
a = 2
b = 3
bw_GBps = 8
"#;

fn main() -> servesim::Result<()> {
    let plan = BatchPlan {
        members: (0..4)
            .map(|id| BatchEntry {
                id,
                phase: Phase::Initiation,
                prompt_len: 512,
                context_len: 512,
            })
            .collect(),
        loads: vec![],
    };
    for (name, network) in [
        ("uniform", NetworkConfig::default()),
        ("slow 2-3 link", NetworkConfig::parse(NETWORK)?),
    ] {
        let mut cfg = SimulationConfig::new(
            ModelConfig::preset("gpt3-7b")?,
            ParallelismConfig::new(ParallelMode::Tensor, 4, 1)?,
        );
        cfg.network = network;
        let mut sim = Simulation::new(cfg, vec![])?;
        let d = sim.simulate_batch(&plan, &[])?;
        println!(
            "{name:<14} {:.3} ms ({:.3} ms in collectives)",
            d.outcome.iteration_latency.as_millis_f64(),
            d.outcome.comm_time.as_millis_f64()
        );
    }
    Ok(())
}
