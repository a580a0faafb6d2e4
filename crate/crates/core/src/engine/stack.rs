use std::sync::atomic::{AtomicU64, Ordering};

use super::{CacheKey, DeviceConfig, DeviceKind, EngineResult, ExecutionEngine, ReuseCache};
use crate::error::{Result, SimError};
use crate::model::{IterationProfile, OperatorDescriptor};
use crate::workload::RequestId;

/// Whether simulated results are reused across layers and iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReuseMode {
    /// Every operator instance of every layer goes to the engine.
    Off,
    /// One block per iteration is evaluated and replicated; results are memoized.
    #[default]
    On,
}

/// Where one operator runs and how many tensor-parallel slices it is cut into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub device: DeviceKind,
    pub shards: u64,
}

/// An operator as simulated (already sharded) and its engine result.
#[derive(Debug, Clone, PartialEq)]
pub struct OpTiming {
    pub desc: OperatorDescriptor,
    pub result: EngineResult,
}

/// Engine results for every operator of an [`IterationProfile`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTiming {
    /// Parallel to `IterationProfile::batched_ops`.
    pub batched: Vec<OpTiming>,
    /// `(request, score, attend)` in batch order.
    pub attention: Vec<(RequestId, OpTiming, OpTiming)>,
    pub num_layers: u64,
}

impl ProfileTiming {
    /// Sum of all operator latencies over the iteration, in seconds.
    pub fn serial_latency(&self) -> f64 {
        let n = self.batched.len();
        let edge = self.batched[0].result.latency + self.batched[n - 1].result.latency;
        let block: f64 = self.batched[1..n - 1]
            .iter()
            .map(|t| t.result.latency)
            .sum();
        let attn: f64 = self
            .attention
            .iter()
            .map(|(_, s, a)| s.result.latency + a.result.latency)
            .sum();
        edge + self.num_layers as f64 * (block + attn)
    }
}

/// The engine, the devices it simulates and the reuse cache.
pub struct EngineStack {
    engine: Box<dyn ExecutionEngine>,
    npu: DeviceConfig,
    pim: Option<DeviceConfig>,
    cache: ReuseCache,
    mode: ReuseMode,
    bytes_per_param: u64,
    attention_calls: AtomicU64,
    other_calls: AtomicU64,
}

impl EngineStack {
    pub fn new(
        engine: Box<dyn ExecutionEngine>,
        npu: DeviceConfig,
        pim: Option<DeviceConfig>,
        mode: ReuseMode,
        bytes_per_param: u64,
    ) -> Result<Self> {
        if npu.kind() != DeviceKind::Npu {
            return Err(SimError::Config("primary device must be an NPU".into()));
        }
        npu.validate()?;
        if let Some(p) = &pim {
            if p.kind() != DeviceKind::Pim {
                return Err(SimError::Config("secondary device must be a PIM".into()));
            }
            p.validate()?;
        }
        Ok(EngineStack {
            engine,
            npu,
            pim,
            cache: ReuseCache::new(),
            mode,
            bytes_per_param,
            attention_calls: AtomicU64::new(0),
            other_calls: AtomicU64::new(0),
        })
    }

    pub fn mode(&self) -> ReuseMode {
        self.mode
    }

    pub fn cache(&self) -> &ReuseCache {
        &self.cache
    }

    pub fn npu(&self) -> &DeviceConfig {
        &self.npu
    }

    pub fn pim(&self) -> Option<&DeviceConfig> {
        self.pim.as_ref()
    }

    /// Engine invocations so far as `(attention, non_attention)`.
    pub fn invocations(&self) -> (u64, u64) {
        (
            self.attention_calls.load(Ordering::Relaxed),
            self.other_calls.load(Ordering::Relaxed),
        )
    }

    pub fn total_invocations(&self) -> u64 {
        let (a, o) = self.invocations();
        a + o
    }

    fn device(&self, kind: DeviceKind) -> Result<&DeviceConfig> {
        match kind {
            DeviceKind::Npu => Ok(&self.npu),
            DeviceKind::Pim => self.pim.as_ref().ok_or_else(|| {
                SimError::Mapping("operator mapped to PIM but none configured".into())
            }),
        }
    }

    fn invoke(&self, desc: &OperatorDescriptor, device: &DeviceConfig) -> Result<EngineResult> {
        let counter = if desc.kind.is_attention() {
            &self.attention_calls
        } else {
            &self.other_calls
        };
        counter.fetch_add(1, Ordering::Relaxed);
        self.engine.simulate_operator(desc, device)
    }

    /// Shards `desc` per `placement` and evaluates it, through the cache when
    /// reuse is on.
    pub fn evaluate(&self, desc: &OperatorDescriptor, placement: Placement) -> Result<OpTiming> {
        let device = self.device(placement.device)?;
        let mut sharded = desc.sharded(placement.shards, self.bytes_per_param)?;
        sharded.device = Some(placement.device);
        let result = match self.mode {
            ReuseMode::On => self
                .cache
                .get_or_compute(CacheKey::new(&sharded, device), || {
                    self.invoke(&sharded, device)
                })?,
            ReuseMode::Off => self.invoke(&sharded, device)?,
        };
        Ok(OpTiming {
            desc: sharded,
            result,
        })
    }
}

/// Times every operator of `profile`.
///
/// With reuse on, the representative block is evaluated once and stands for
/// all layers, and each attention shape is evaluated once and shared by every
/// layer and every request with the same shape. With reuse off, each layer's
/// operators are evaluated separately; the returned timings are identical.
pub fn simulate_block_replicated(
    profile: &IterationProfile,
    placement: impl Fn(&OperatorDescriptor) -> Result<Placement>,
    stack: &EngineStack,
) -> Result<ProfileTiming> {
    let layer_passes = match stack.mode() {
        ReuseMode::On => 1,
        ReuseMode::Off => profile.num_layers.max(1),
    };
    let n = profile.batched_ops.len();

    let mut batched: Vec<Option<OpTiming>> = vec![None; n];
    let mut attention: Vec<(RequestId, OpTiming, OpTiming)> = Vec::new();
    for pass in 0..layer_passes {
        for (i, op) in profile.batched_ops.iter().enumerate() {
            let is_block = i != 0 && i != n - 1;
            if pass > 0 && !is_block {
                continue;
            }
            batched[i] = Some(stack.evaluate(op, placement(op)?)?);
        }
        attention.clear();
        for a in &profile.per_request_attention {
            let s = stack.evaluate(&a.score, placement(&a.score)?)?;
            let t = stack.evaluate(&a.attend, placement(&a.attend)?)?;
            attention.push((a.id, s, t));
        }
    }

    Ok(ProfileTiming {
        batched: batched.into_iter().map(|t| t.expect("evaluated")).collect(),
        attention,
        num_layers: profile.num_layers,
    })
}
