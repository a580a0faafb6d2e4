//! Analytical execution engines.
//!
//! An engine turns one [`OperatorDescriptor`] into a latency on one device.
//! The bundled [`AnalyticalEngine`] models the NPU as an output-stationary
//! systolic array bounded by memory bandwidth, and PIM as a pure
//! bandwidth device for GEMV. Other engines plug in through
//! [`ExecutionEngine`].

mod cache;
mod device;
mod stack;

use crate::error::{Result, SimError};
use crate::model::OperatorDescriptor;

pub use cache::{CacheKey, ReuseCache};
pub use device::{DeviceConfig, DeviceKind, HardwareConfig, NpuConfig, PimConfig, GB};
pub use stack::{
    simulate_block_replicated, EngineStack, OpTiming, Placement, ProfileTiming, ReuseMode,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bound {
    Compute,
    Memory,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineResult {
    /// Seconds, launch overhead included.
    pub latency: f64,
    pub compute_time: f64,
    pub memory_time: f64,
    pub bound: Bound,
    pub flops: u64,
    pub bytes: u64,
}

/// A hardware cost model.
pub trait ExecutionEngine: Send + Sync {
    fn simulate_operator(
        &self,
        desc: &OperatorDescriptor,
        device: &DeviceConfig,
    ) -> Result<EngineResult>;
}

/// Closed-form NPU/PIM cost model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AnalyticalEngine {
    /// Use `flops / peak` for matrix operators instead of the tile count.
    pub fast_run: bool,
}

impl AnalyticalEngine {
    pub fn new(fast_run: bool) -> Self {
        AnalyticalEngine { fast_run }
    }
}

/// Cycles for `batch` independent `m x k x n` products on an `rows x cols`
/// array: every output tile streams `k` operands plus `rows + cols` cycles
/// of fill and drain.
pub fn systolic_cycles(batch: u64, m: u64, k: u64, n: u64, rows: u64, cols: u64) -> u64 {
    let tiles = batch * m.div_ceil(rows) * n.div_ceil(cols);
    tiles * (k + rows + cols)
}

impl ExecutionEngine for AnalyticalEngine {
    fn simulate_operator(
        &self,
        desc: &OperatorDescriptor,
        device: &DeviceConfig,
    ) -> Result<EngineResult> {
        match device {
            DeviceConfig::Npu(npu) => {
                let compute_time = if desc.kind.is_matmul() && !self.fast_run {
                    let cycles = systolic_cycles(
                        desc.batch,
                        desc.m,
                        desc.k,
                        desc.n,
                        npu.array_rows,
                        npu.array_cols,
                    );
                    cycles as f64 / npu.clock_hz
                } else {
                    desc.flops as f64 / npu.peak_flops()
                };
                let memory_time = desc.bytes as f64 / npu.mem_bw;
                let (busy, bound) = if compute_time >= memory_time {
                    (compute_time, Bound::Compute)
                } else {
                    (memory_time, Bound::Memory)
                };
                Ok(EngineResult {
                    latency: busy + npu.launch_overhead,
                    compute_time,
                    memory_time,
                    bound,
                    flops: desc.flops,
                    bytes: desc.bytes,
                })
            }
            DeviceConfig::Pim(pim) => {
                if !desc.is_gemv() {
                    return Err(SimError::Mapping(format!(
                        "PIM accepts only GEMV operators, got {} with m = {}",
                        desc.kind, desc.m
                    )));
                }
                let memory_time = desc.bytes as f64 / pim.gemv_bw;
                Ok(EngineResult {
                    latency: memory_time + pim.launch_overhead,
                    compute_time: 0.0,
                    memory_time,
                    bound: Bound::Memory,
                    flops: desc.flops,
                    bytes: desc.bytes,
                })
            }
        }
    }
}

/// Evaluates with the default (tile-accurate) analytical engine.
pub fn simulate_operator(desc: &OperatorDescriptor, device: &DeviceConfig) -> Result<EngineResult> {
    AnalyticalEngine::default().simulate_operator(desc, device)
}

/// Cache-backed evaluation: a hit skips the engine entirely.
pub fn cached_simulate(
    engine: &dyn ExecutionEngine,
    desc: &OperatorDescriptor,
    device: &DeviceConfig,
    cache: &ReuseCache,
) -> Result<EngineResult> {
    cache.get_or_compute(CacheKey::new(desc, device), || {
        engine.simulate_operator(desc, device)
    })
}
