//! Count engine invocations over a decode loop with and without the
//! reuse cache.
//!
//! ```bash
//! cargo run --example reuse_cache
//! ```

use servesim::driver::{Simulation, SimulationConfig};
use servesim::engine::ReuseMode;
use servesim::graph::{ParallelMode, ParallelismConfig};
use servesim::model::ModelConfig;
use servesim::workload::Request;

fn run(mode: ReuseMode) -> servesim::Result<(u64, u64, f64)> {
    let mut cfg = SimulationConfig::new(
        ModelConfig::preset("gpt3-7b")?,
        ParallelismConfig::new(ParallelMode::Tensor, 1, 1)?,
    );
    cfg.reuse = mode;
    cfg.skip_initiation = true;
    let reqs = (0..16)
        .map(|i| Request::new(i, 0, 100 + 20 * i as u32, 50))
        .collect();
    let mut sim = Simulation::new(cfg, reqs)?;
    let summary = sim.run(|_| {})?;
    let (attn, other) = sim.stack().invocations();
    Ok((attn, other, summary.clock.as_secs_f64()))
}

fn main() -> servesim::Result<()> {
    for mode in [ReuseMode::Off, ReuseMode::On] {
        let (attn, other, clock) = run(mode)?;
        println!("{mode:?}: {attn} attention + {other} other engine calls, simulated {clock:.6} s");
    }
    Ok(())
}
