//! Decode latency of one batch with attention on the NPU, on local PIM,
//! and on a PIM pool with and without sub-batch interleaving.
//!
//! ```bash
//! cargo run --example pim_offload
//! ```

use servesim::driver::{Simulation, SimulationConfig};
use servesim::graph::{ParallelMode, ParallelismConfig};
use servesim::model::{BatchEntry, ModelConfig, Phase};
use servesim::scheduler::{BatchPlan, PimType};

fn main() -> servesim::Result<()> {
    let plan = BatchPlan {
        members: (0..32)
            .map(|id| BatchEntry {
                id,
                phase: Phase::Generation,
                prompt_len: 0,
                context_len: 256 + 64 * id,
            })
            .collect(),
        loads: vec![],
    };
    for (pim, sub_batch) in [
        (PimType::None, false),
        (PimType::Local, false),
        (PimType::Pool, false),
        (PimType::Pool, true),
    ] {
        let mut cfg = SimulationConfig::new(
            ModelConfig::preset("gpt3-7b")?,
            ParallelismConfig::new(ParallelMode::Tensor, 2, 1)?,
        );
        cfg.pim_type = pim;
        cfg.sub_batch = sub_batch;
        let mut sim = Simulation::new(cfg, vec![])?;
        let d = sim.simulate_batch(&plan, &[])?;
        println!(
            "pim={pim:<5} sub_batch={sub_batch:<5} latency {:>8.3} ms  (operator schedule {:.3} ms, serial {:.3} ms)",
            d.outcome.iteration_latency.as_millis_f64(),
            d.trace.makespan.as_millis_f64(),
            d.trace.serial_time().as_millis_f64()
        );
    }
    Ok(())
}
