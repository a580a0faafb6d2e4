//! Paged KV-cache accounting.
//!
//! Every device holds the same slice of each request's KV cache (its heads
//! and its pipeline stage's layers), so one table describes all devices.

use std::collections::BTreeMap;

use crate::error::{Result, SimError};
use crate::graph::ParallelismConfig;
use crate::model::ModelConfig;
use crate::workload::RequestId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PageOp {
    /// Device to host.
    Store,
    /// Host to device.
    Load,
}

/// A page transfer that the graph builder turns into a memory node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PageEvent {
    pub op: PageOp,
    pub request: RequestId,
    pub pages: u64,
    /// Per-device bytes: `pages * page_bytes`.
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvPageTable {
    page_size: u64,
    page_bytes: u64,
    capacity_pages: u64,
    resident: BTreeMap<RequestId, u64>,
    host: BTreeMap<RequestId, u64>,
    free: u64,
}

/// Sizing inputs for [`KvPageTable::for_model`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryBudget {
    /// Device memory in bytes.
    pub device_mem: u64,
    /// Tokens per page.
    pub page_size: u64,
    /// Largest batched token count the activation workspace must hold.
    pub max_batch_tokens: u64,
}

impl KvPageTable {
    pub fn new(page_size: u64, page_bytes: u64, capacity_pages: u64) -> Result<Self> {
        if page_size == 0 || page_bytes == 0 {
            return Err(SimError::Config(
                "page size and page bytes must be positive".into(),
            ));
        }
        Ok(KvPageTable {
            page_size,
            page_bytes,
            capacity_pages,
            resident: BTreeMap::new(),
            host: BTreeMap::new(),
            free: capacity_pages,
        })
    }

    /// Capacity left on each device after weights and an activation workspace
    /// of `2 * max_batch_tokens * d` elements.
    pub fn for_model(
        model: &ModelConfig,
        par: &ParallelismConfig,
        budget: MemoryBudget,
    ) -> Result<Self> {
        let tp = par.tp_degree() as u64;
        let layers = par.layers_per_stage(model.num_layers);
        let d = model.hidden_dim;
        let bpp = model.bytes_per_param;

        let page_bytes = (budget.page_size * 2 * d * layers * bpp).div_ceil(tp);
        let block_params = 4 * d * d + 2 * d * model.ffn_dim + 4 * d;
        let edge_params = model.vocab_size * d + 2 * d;
        let weights = ((block_params * layers + edge_params) * bpp).div_ceil(tp);
        let reserve = 2 * budget.max_batch_tokens * d * bpp;

        let usable = budget
            .device_mem
            .checked_sub(weights + reserve)
            .filter(|&b| b >= page_bytes)
            .ok_or_else(|| {
                SimError::Config(format!(
                    "{} does not fit: {} B of weights and {} B of workspace per device exceed {} B",
                    model.name, weights, reserve, budget.device_mem
                ))
            })?;
        Self::new(budget.page_size, page_bytes, usable / page_bytes)
    }

    pub fn page_size(&self) -> u64 {
        self.page_size
    }

    pub fn page_bytes(&self) -> u64 {
        self.page_bytes
    }

    pub fn capacity_pages(&self) -> u64 {
        self.capacity_pages
    }

    pub fn free_pages(&self) -> u64 {
        self.free
    }

    pub fn resident_total(&self) -> u64 {
        self.resident.values().sum()
    }

    pub fn resident_pages(&self, id: RequestId) -> u64 {
        self.resident.get(&id).copied().unwrap_or(0)
    }

    pub fn host_pages(&self, id: RequestId) -> u64 {
        self.host.get(&id).copied().unwrap_or(0)
    }

    pub fn pages_for(&self, tokens: u64) -> u64 {
        tokens.div_ceil(self.page_size)
    }

    /// Grants `pages` more to `id` if they are free.
    pub fn try_allocate(&mut self, id: RequestId, pages: u64) -> bool {
        if pages > self.free {
            return false;
        }
        self.free -= pages;
        *self.resident.entry(id).or_default() += pages;
        true
    }

    /// Frees everything `id` holds on the device.
    pub fn release(&mut self, id: RequestId) -> u64 {
        let pages = self.resident.remove(&id).unwrap_or(0);
        self.free += pages;
        pages
    }

    /// Moves all of `id`'s pages to host memory.
    pub fn evict(&mut self, id: RequestId) -> PageEvent {
        let pages = self.release(id);
        *self.host.entry(id).or_default() += pages;
        PageEvent {
            op: PageOp::Store,
            request: id,
            pages,
            bytes: pages * self.page_bytes,
        }
    }

    /// Brings `id`'s host pages back and tops it up to `total_pages`.
    /// Returns `None` if that many pages are not free.
    pub fn reload(&mut self, id: RequestId, total_pages: u64) -> Option<PageEvent> {
        let stored = self.host_pages(id);
        let total = total_pages.max(stored);
        if !self.try_allocate(id, total) {
            return None;
        }
        self.host.remove(&id);
        Some(PageEvent {
            op: PageOp::Load,
            request: id,
            pages: stored,
            bytes: stored * self.page_bytes,
        })
    }

    /// `resident + free == capacity`.
    pub fn is_consistent(&self) -> bool {
        self.resident_total() + self.free == self.capacity_pages
    }
}
