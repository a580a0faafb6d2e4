//! Squeeze a burst of requests into a small device memory and watch the
//! scheduler evict and reload KV pages.
//!
//! ```bash
//! cargo run --example kv_paging
//! ```

use servesim::driver::{Simulation, SimulationConfig};
use servesim::graph::{ParallelMode, ParallelismConfig};
use servesim::model::ModelConfig;
use servesim::scheduler::{PageOp, SchedulerEvent};
use servesim::workload::Request;

fn main() -> servesim::Result<()> {
    let mut cfg = SimulationConfig::new(
        ModelConfig::preset("gpt2")?,
        ParallelismConfig::new(ParallelMode::Tensor, 1, 1)?,
    );
    cfg.npu_mem = 270 << 20;
    let reqs = (0..12).map(|i| Request::new(i, 0, 300, 400)).collect();
    let mut sim = Simulation::new(cfg, reqs)?;
    println!(
        "{} pages of {} B",
        sim.state().page_table.capacity_pages(),
        sim.state().page_table.page_bytes()
    );

    while let Some(rec) = sim.step()? {
        for ev in &rec.page_events {
            let what = match ev.op {
                PageOp::Store => "store",
                PageOp::Load => "load",
            };
            println!(
                "iter {:>4}: {what} request {} ({} pages)",
                rec.index, ev.request, ev.pages
            );
        }
    }
    let evictions = sim
        .state()
        .events()
        .iter()
        .filter(|(_, e)| matches!(e, SchedulerEvent::Evicted { .. }))
        .count();
    let s = sim.summary(std::time::Duration::ZERO);
    println!(
        "{evictions} evictions; {}/{} finished after {} iterations",
        s.finished, s.requests, s.iterations
    );
    Ok(())
}
