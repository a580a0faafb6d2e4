//! Iteration-level co-simulation of LLM inference serving on NPU and PIM
//! clusters.
//!
//! Each simulated iteration forms a batch under KV-cache constraints,
//! profiles the model's operators for that batch, maps them onto NPU or PIM
//! engines, times them with an analytical cost model, assembles an execution
//! graph with parallelism collectives and paging transfers, and replays the
//! graph on a discrete-event system model. The resulting latency advances
//! the scheduler clock for the next iteration.

pub mod cli;
pub mod driver;
pub mod engine;
pub mod error;
pub mod graph;
pub mod model;
pub mod scheduler;
pub mod syssim;
pub mod time;
pub mod workload;

pub use error::{Result, SimError};
pub use time::SimTime;
