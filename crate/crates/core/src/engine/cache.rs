use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use super::{DeviceConfig, EngineResult};
use crate::error::Result;
use crate::model::{OperatorDescriptor, OperatorKind, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub kind: OperatorKind,
    pub phase: Phase,
    pub batch: u64,
    pub m: u64,
    pub k: u64,
    pub n: u64,
    pub bytes: u64,
    pub device: u64,
}

impl CacheKey {
    pub fn new(desc: &OperatorDescriptor, device: &DeviceConfig) -> Self {
        CacheKey {
            kind: desc.kind,
            phase: desc.phase,
            batch: desc.batch,
            m: desc.m,
            k: desc.k,
            n: desc.n,
            bytes: desc.bytes,
            device: device.fingerprint(),
        }
    }
}

/// Memo of engine results keyed by operator shape and device.
///
/// `get_or_compute` is linearizable: concurrent readers share a read lock
/// and a miss computes under the write lock, so each key is evaluated once.
#[derive(Debug, Default)]
pub struct ReuseCache {
    entries: RwLock<HashMap<CacheKey, EngineResult>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ReuseCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &CacheKey) -> Option<EngineResult> {
        self.entries
            .read()
            .expect("cache lock poisoned")
            .get(key)
            .copied()
    }

    pub fn get_or_compute(
        &self,
        key: CacheKey,
        compute: impl FnOnce() -> Result<EngineResult>,
    ) -> Result<EngineResult> {
        if let Some(hit) = self.get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit);
        }
        let mut map = self.entries.write().expect("cache lock poisoned");
        if let Some(hit) = map.get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(*hit);
        }
        let result = compute()?;
        map.insert(key, result);
        self.misses.fetch_add(1, Ordering::Relaxed);
        Ok(result)
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{cached_simulate, AnalyticalEngine, NpuConfig};
    use crate::model::LayerIndex;
    use std::sync::Arc;

    fn desc() -> OperatorDescriptor {
        OperatorDescriptor::new(
            OperatorKind::FFN1,
            LayerIndex::All,
            Phase::Generation,
            (1, 8, 512, 2048),
            2,
        )
    }

    #[test]
    fn second_identical_call_hits() {
        let cache = ReuseCache::new();
        let engine = AnalyticalEngine::default();
        let dev = DeviceConfig::Npu(NpuConfig::default());
        let a = cached_simulate(&engine, &desc(), &dev, &cache).unwrap();
        let b = cached_simulate(&engine, &desc(), &dev, &cache).unwrap();
        assert_eq!(a, b);
        assert_eq!((cache.hits(), cache.misses()), (1, 1));
    }

    #[test]
    fn different_device_misses() {
        let cache = ReuseCache::new();
        let engine = AnalyticalEngine::default();
        let slow = NpuConfig {
            clock_hz: 5e8,
            ..NpuConfig::default()
        };
        cached_simulate(
            &engine,
            &desc(),
            &DeviceConfig::Npu(NpuConfig::default()),
            &cache,
        )
        .unwrap();
        cached_simulate(&engine, &desc(), &DeviceConfig::Npu(slow), &cache).unwrap();
        assert_eq!((cache.hits(), cache.misses()), (0, 2));
    }

    #[test]
    fn concurrent_get_or_compute_computes_once() {
        let cache = Arc::new(ReuseCache::new());
        let calls = Arc::new(AtomicU64::new(0));
        let dev = DeviceConfig::Npu(NpuConfig::default());
        let key = CacheKey::new(&desc(), &dev);
        let threads: Vec<_> = (0..8)
            .map(|_| {
                let cache = Arc::clone(&cache);
                let calls = Arc::clone(&calls);
                let dev = dev.clone();
                std::thread::spawn(move || {
                    cache
                        .get_or_compute(key, || {
                            calls.fetch_add(1, Ordering::SeqCst);
                            AnalyticalEngine::default().simulate_operator(&desc(), &dev)
                        })
                        .unwrap()
                })
            })
            .collect();
        let results: Vec<_> = threads.into_iter().map(|t| t.join().unwrap()).collect();
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert!(results.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(cache.hits() + cache.misses(), 8);
    }

    use crate::engine::ExecutionEngine;
}
