use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ParallelMode {
    /// All NPUs form one tensor-parallel group.
    Tensor,
    /// Every NPU is its own pipeline stage.
    Pipeline,
    /// `npu_group` pipeline stages, each a tensor-parallel group.
    #[default]
    Hybrid,
}

impl FromStr for ParallelMode {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tensor" => Ok(ParallelMode::Tensor),
            "pipeline" => Ok(ParallelMode::Pipeline),
            "hybrid" => Ok(ParallelMode::Hybrid),
            other => Err(SimError::Config(format!(
                "unknown parallel {other:?}; expected one of pipeline, tensor, hybrid"
            ))),
        }
    }
}

impl fmt::Display for ParallelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParallelMode::Tensor => "tensor",
            ParallelMode::Pipeline => "pipeline",
            ParallelMode::Hybrid => "hybrid",
        })
    }
}

/// How NPUs split the model. NPUs `[s * tp, (s + 1) * tp)` form stage `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParallelismConfig {
    pub mode: ParallelMode,
    pub npu_num: usize,
    /// Number of pipeline stages.
    pub npu_group: usize,
}

impl ParallelismConfig {
    /// `npu_group` is honored in hybrid mode only; tensor mode uses one
    /// group and pipeline mode one NPU per group.
    pub fn new(mode: ParallelMode, npu_num: usize, npu_group: usize) -> Result<Self> {
        if npu_num == 0 {
            return Err(SimError::Config("npu_num must be at least 1".into()));
        }
        let groups = match mode {
            ParallelMode::Tensor => 1,
            ParallelMode::Pipeline => npu_num,
            ParallelMode::Hybrid => npu_group,
        };
        if groups == 0 || !npu_num.is_multiple_of(groups) {
            return Err(SimError::Config(format!(
                "npu_group {groups} must divide npu_num {npu_num}"
            )));
        }
        Ok(ParallelismConfig {
            mode,
            npu_num,
            npu_group: groups,
        })
    }

    pub fn stages(&self) -> usize {
        self.npu_group
    }

    pub fn tp_degree(&self) -> usize {
        self.npu_num / self.npu_group
    }

    pub fn layers_per_stage(&self, num_layers: u64) -> u64 {
        num_layers.div_ceil(self.stages() as u64)
    }

    pub fn stage_of_layer(&self, layer: u64, num_layers: u64) -> usize {
        (layer / self.layers_per_stage(num_layers)) as usize
    }

    pub fn stage_devices(&self, stage: usize) -> Range<usize> {
        let tp = self.tp_degree();
        stage * tp..(stage + 1) * tp
    }

    /// Rejects layouts that would leave a pipeline stage without layers.
    pub fn validate_layers(&self, num_layers: u64) -> Result<()> {
        let per = self.layers_per_stage(num_layers);
        let used = num_layers.div_ceil(per) as usize;
        if used != self.stages() {
            return Err(SimError::Config(format!(
                "{} pipeline stages cannot each own layers of a {num_layers}-layer model",
                self.stages()
            )));
        }
        Ok(())
    }

    /// Splits a tensor-parallel group for attention. Each request's heads
    /// are split `gcd(tp, heads)` ways, and the group is cut into
    /// `tp / gcd` sub-groups that take requests round-robin.
    pub fn attention_split(&self, num_heads: u64) -> Result<AttentionSplit> {
        if num_heads == 0 {
            return Err(SimError::Config("model has no attention heads".into()));
        }
        let tp = self.tp_degree() as u64;
        let shards = gcd(tp, num_heads);
        Ok(AttentionSplit {
            head_shards: shards,
            subgroups: (tp / shards) as usize,
        })
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionSplit {
    /// Ways each request's heads are split.
    pub head_shards: u64,
    /// Independent lane groups taking requests round-robin.
    pub subgroups: usize,
}

impl AttentionSplit {
    /// Lanes (positions inside the tensor-parallel group) that run the
    /// attention of the request at `position` in the batch.
    pub fn lanes(&self, position: usize) -> Range<usize> {
        let q = position % self.subgroups;
        let w = self.head_shards as usize;
        q * w..(q + 1) * w
    }
}
