use crate::model::{BatchEntry, Phase};
use crate::scheduler::PageEvent;
use crate::workload::RequestId;

/// Requests selected for one iteration.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BatchPlan {
    /// In admission order.
    pub members: Vec<BatchEntry>,
    /// Host-to-device reloads that must finish before the iteration computes.
    pub loads: Vec<PageEvent>,
}

impl BatchPlan {
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn ids(&self) -> Vec<RequestId> {
        self.members.iter().map(|e| e.id).collect()
    }

    pub fn total_tokens(&self) -> u64 {
        self.members.iter().map(BatchEntry::query_len).sum()
    }

    pub fn initiation_count(&self) -> usize {
        self.members
            .iter()
            .filter(|e| e.phase == Phase::Initiation)
            .count()
    }
}

/// Balance target when splitting a batch in two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PartitionCriteria {
    /// Sum of context lengths (memory traffic of attention).
    #[default]
    TokenCount,
    RequestCount,
}

impl PartitionCriteria {
    fn weight(self, e: &BatchEntry) -> u64 {
        match self {
            PartitionCriteria::TokenCount => e.context_len,
            PartitionCriteria::RequestCount => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubBatch {
    pub index: usize,
    pub entries: Vec<BatchEntry>,
}

/// Splits `batch` into independent sub-batches.
///
/// With `enabled` the batch is cut in two by greedy longest-first
/// assignment to the lighter side; a side left empty collapses the result
/// to a single sub-batch. Members keep their batch order inside each side.
pub fn partition_batch(
    batch: &BatchPlan,
    criteria: PartitionCriteria,
    enabled: bool,
) -> Vec<SubBatch> {
    if batch.is_empty() {
        return Vec::new();
    }
    if !enabled || batch.len() < 2 {
        return vec![SubBatch {
            index: 0,
            entries: batch.members.clone(),
        }];
    }

    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(criteria.weight(&batch.members[i])), i));

    let mut side = vec![0usize; batch.len()];
    let mut load = [0u64; 2];
    for i in order {
        let target = if load[1] < load[0] { 1 } else { 0 };
        side[i] = target;
        load[target] += criteria.weight(&batch.members[i]);
    }

    let halves: Vec<Vec<BatchEntry>> = (0..2)
        .map(|s| {
            batch
                .members
                .iter()
                .zip(&side)
                .filter(|(_, &sd)| sd == s)
                .map(|(e, _)| *e)
                .collect()
        })
        .collect();
    halves
        .into_iter()
        .filter(|h| !h.is_empty())
        .enumerate()
        .map(|(index, entries)| SubBatch { index, entries })
        .collect()
}
