//! Parametric decoder models and per-iteration operator profiling.
//!
//! One transformer block is profiled and replicated across all layers.
//! Non-attention operators are batched over every token in the iteration;
//! `Score`/`Attend` are emitted per request because their shapes depend on
//! each request's context length.

mod presets;

use std::collections::BTreeMap;
use std::fmt;

use serde::Deserialize;

use crate::engine::DeviceKind;
use crate::error::{Result, SimError};
use crate::workload::RequestId;

pub use presets::{builtin_presets, load_presets, parse_presets};

/// Shape of a decoder-only transformer.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub name: String,
    pub num_layers: u64,
    pub hidden_dim: u64,
    pub num_heads: u64,
    pub ffn_dim: u64,
    pub vocab_size: u64,
    pub bytes_per_param: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct ModelConfigFile {
    pub num_layers: u64,
    pub hidden_dim: u64,
    pub num_heads: u64,
    pub ffn_dim: Option<u64>,
    pub vocab_size: u64,
    #[serde(default = "default_bytes_per_param")]
    pub bytes_per_param: u64,
}

fn default_bytes_per_param() -> u64 {
    2
}

impl ModelConfig {
    /// Builds and validates a model; `ffn_dim` defaults to `4 * hidden_dim`.
    pub fn new(
        name: impl Into<String>,
        num_layers: u64,
        hidden_dim: u64,
        num_heads: u64,
        ffn_dim: Option<u64>,
        vocab_size: u64,
        bytes_per_param: u64,
    ) -> Result<Self> {
        let cfg = ModelConfig {
            name: name.into(),
            num_layers,
            hidden_dim,
            num_heads,
            ffn_dim: ffn_dim.unwrap_or(4 * hidden_dim),
            vocab_size,
            bytes_per_param,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Looks a name up in the bundled preset file.
    pub fn preset(name: &str) -> Result<Self> {
        let presets = builtin_presets();
        presets.get(name).cloned().ok_or_else(|| {
            let known: Vec<&str> = presets.keys().map(String::as_str).collect();
            SimError::Config(format!(
                "unknown model {name:?}; expected one of {}",
                known.join(", ")
            ))
        })
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("num_layers", self.num_layers),
            ("hidden_dim", self.hidden_dim),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
            ("bytes_per_param", self.bytes_per_param),
        ];
        if let Some((field, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(SimError::Config(format!(
                "model {}: {field} must be at least 1",
                self.name
            )));
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            return Err(SimError::Config(format!(
                "model {}: hidden_dim {} is not divisible by num_heads {}",
                self.name, self.hidden_dim, self.num_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> u64 {
        self.hidden_dim / self.num_heads
    }

    /// Parameter count: tied embedding, attention and FFN matrices, and
    /// LayerNorm scale/shift vectors (two per block plus the final norm).
    pub fn param_count(&self) -> u64 {
        let d = self.hidden_dim;
        let f = self.ffn_dim;
        let per_block = 4 * d * d + 2 * d * f + 4 * d;
        self.vocab_size * d + self.num_layers * per_block + 2 * d
    }

    pub fn weight_bytes(&self) -> u64 {
        self.param_count() * self.bytes_per_param
    }
}

/// Bytes of K and V cached per token over all layers.
pub fn kv_bytes_per_token(model: &ModelConfig) -> u64 {
    2 * model.hidden_dim * model.num_layers * model.bytes_per_param
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OperatorKind {
    Embedding,
    LayerNorm,
    QKVGen,
    Score,
    Attend,
    OutProj,
    FFN1,
    FFN2,
    LMHead,
}

impl OperatorKind {
    pub fn is_attention(self) -> bool {
        matches!(self, OperatorKind::Score | OperatorKind::Attend)
    }

    /// Matrix-multiply shaped (as opposed to element-wise / gather).
    pub fn is_matmul(self) -> bool {
        !matches!(self, OperatorKind::Embedding | OperatorKind::LayerNorm)
    }

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::Embedding => "embedding",
            OperatorKind::LayerNorm => "layernorm",
            OperatorKind::QKVGen => "qkv",
            OperatorKind::Score => "score",
            OperatorKind::Attend => "attend",
            OperatorKind::OutProj => "out_proj",
            OperatorKind::FFN1 => "ffn1",
            OperatorKind::FFN2 => "ffn2",
            OperatorKind::LMHead => "lm_head",
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    /// Prompt processing (prefill).
    Initiation,
    /// One token per request per iteration (decode).
    Generation,
}

/// Which transformer layer(s) an operator instance stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerIndex {
    /// Representative block operator, replicated over every layer.
    All,
    Layer(u64),
    /// Embedding and LM head, outside the block stack.
    Unlayered,
}

/// One operator instance with its dimensions and costs.
///
/// Matrix-shaped operators compute `batch` independent `m x k` by `k x n`
/// products; for attention `batch` is the head count.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OperatorDescriptor {
    pub kind: OperatorKind,
    pub layer: LayerIndex,
    pub attention_id: Option<RequestId>,
    pub phase: Phase,
    pub batch: u64,
    pub m: u64,
    pub k: u64,
    pub n: u64,
    pub flops: u64,
    pub bytes: u64,
    pub device: Option<DeviceKind>,
}

impl OperatorDescriptor {
    pub fn new(
        kind: OperatorKind,
        layer: LayerIndex,
        phase: Phase,
        (batch, m, k, n): (u64, u64, u64, u64),
        bytes_per_param: u64,
    ) -> Self {
        let mut desc = OperatorDescriptor {
            kind,
            layer,
            attention_id: None,
            phase,
            batch,
            m,
            k,
            n,
            flops: 0,
            bytes: 0,
            device: None,
        };
        desc.recompute_costs(bytes_per_param);
        desc
    }

    fn attention(
        kind: OperatorKind,
        id: RequestId,
        phase: Phase,
        dims: (u64, u64, u64, u64),
        bytes_per_param: u64,
    ) -> Self {
        let mut desc = Self::new(kind, LayerIndex::All, phase, dims, bytes_per_param);
        desc.attention_id = Some(id);
        desc
    }

    fn recompute_costs(&mut self, bytes_per_param: u64) {
        self.flops = operator_flops(self);
        self.bytes = operator_bytes(self, bytes_per_param);
    }

    /// GEMV: a single query row.
    pub fn is_gemv(&self) -> bool {
        self.kind.is_matmul() && self.m == 1
    }

    /// FLOPs per byte moved.
    pub fn arithmetic_intensity(&self) -> f64 {
        self.flops as f64 / self.bytes as f64
    }

    /// The slice of this operator one of `ways` tensor-parallel ranks runs.
    ///
    /// Weight matrices are cut along their output columns `n`, attention
    /// splits heads and element-wise operators split tokens. The output
    /// projection and second FFN are costed as output-column slices too: the
    /// slice holds the same weights and FLOPs as a reduction-dimension
    /// slice, and the tile count then scales exactly with the shard count.
    /// Head splits must divide the head count.
    pub fn sharded(&self, ways: u64, bytes_per_param: u64) -> Result<Self> {
        if ways == 0 {
            return Err(SimError::InvalidArgument(
                "shard count must be positive".into(),
            ));
        }
        let mut out = self.clone();
        if ways == 1 {
            return Ok(out);
        }
        match self.kind {
            OperatorKind::QKVGen
            | OperatorKind::FFN1
            | OperatorKind::LMHead
            | OperatorKind::OutProj
            | OperatorKind::FFN2 => out.n = self.n.div_ceil(ways),
            OperatorKind::Score | OperatorKind::Attend => {
                if !self.batch.is_multiple_of(ways) {
                    return Err(SimError::Config(format!(
                        "cannot split {} heads {ways} ways",
                        self.batch
                    )));
                }
                out.batch = self.batch / ways;
            }
            OperatorKind::LayerNorm | OperatorKind::Embedding => out.m = self.m.div_ceil(ways),
        }
        out.recompute_costs(bytes_per_param);
        Ok(out)
    }
}

fn operator_flops(desc: &OperatorDescriptor) -> u64 {
    match desc.kind {
        OperatorKind::Embedding => 0,
        // normalize + scale/shift, with the residual add folded in
        OperatorKind::LayerNorm => 5 * desc.m * desc.n,
        _ => 2 * desc.batch * desc.m * desc.k * desc.n,
    }
}

/// Bytes moved by one operator instance: weights (or cached K/V for
/// attention) plus input and output activations. Weights are read once.
pub fn operator_bytes(desc: &OperatorDescriptor, bytes_per_param: u64) -> u64 {
    let elems = match desc.kind {
        // gathered embedding rows + written activations
        OperatorKind::Embedding => 2 * desc.m * desc.n,
        OperatorKind::LayerNorm => 2 * desc.m * desc.n,
        _ => {
            let operand = desc.batch * desc.k * desc.n;
            let input = desc.batch * desc.m * desc.k;
            let output = desc.batch * desc.m * desc.n;
            operand + input + output
        }
    };
    elems * bytes_per_param
}

/// One request's slot in an iteration, as seen by the profiler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchEntry {
    pub id: RequestId,
    pub phase: Phase,
    /// Prompt length during initiation; ignored for generation (always 1).
    pub prompt_len: u64,
    /// Tokens attended over, the new ones included.
    pub context_len: u64,
}

impl BatchEntry {
    pub fn query_len(&self) -> u64 {
        match self.phase {
            Phase::Initiation => self.prompt_len,
            Phase::Generation => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestAttention {
    pub id: RequestId,
    pub score: OperatorDescriptor,
    pub attend: OperatorDescriptor,
}

/// Operators for one iteration of one (sub-)batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IterationProfile {
    /// Program order: embedding, block operators, LM head. Attention runs
    /// between `QKVGen` and `OutProj`.
    pub batched_ops: Vec<OperatorDescriptor>,
    /// Per-request `Score`/`Attend`, in batch order.
    pub per_request_attention: Vec<RequestAttention>,
    pub total_tokens: u64,
    /// Replication count of block operators.
    pub num_layers: u64,
}

impl IterationProfile {
    pub fn embedding(&self) -> &OperatorDescriptor {
        &self.batched_ops[0]
    }

    pub fn lm_head(&self) -> &OperatorDescriptor {
        self.batched_ops.last().expect("profile has an LM head")
    }

    /// Block operators in program order, attention excluded.
    pub fn block_ops(&self) -> &[OperatorDescriptor] {
        &self.batched_ops[1..self.batched_ops.len() - 1]
    }

    /// FLOPs for the whole iteration, block replication applied.
    pub fn total_flops(&self) -> u64 {
        let block: u64 = self.block_ops().iter().map(|o| o.flops).sum();
        let attn: u64 = self
            .per_request_attention
            .iter()
            .map(|a| a.score.flops + a.attend.flops)
            .sum();
        self.embedding().flops + self.lm_head().flops + self.num_layers * (block + attn)
    }

    pub fn total_bytes(&self) -> u64 {
        let block: u64 = self.block_ops().iter().map(|o| o.bytes).sum();
        let attn: u64 = self
            .per_request_attention
            .iter()
            .map(|a| a.score.bytes + a.attend.bytes)
            .sum();
        self.embedding().bytes + self.lm_head().bytes + self.num_layers * (block + attn)
    }

    pub fn request_ids(&self) -> impl Iterator<Item = RequestId> + '_ {
        self.per_request_attention.iter().map(|a| a.id)
    }
}

/// Expands one iteration of `batch` into operators for one representative
/// transformer block plus embedding and LM head.
pub fn profile_operators(model: &ModelConfig, batch: &[BatchEntry]) -> Result<IterationProfile> {
    if batch.is_empty() {
        return Err(SimError::InvalidArgument(
            "cannot profile an empty batch".into(),
        ));
    }
    let mut seen = BTreeMap::new();
    for e in batch {
        if seen.insert(e.id, ()).is_some() {
            return Err(SimError::InvalidArgument(format!(
                "request {} appears twice in the batch",
                e.id
            )));
        }
        match e.phase {
            Phase::Generation if e.context_len == 0 => {
                return Err(SimError::InvalidArgument(format!(
                    "request {} is in generation with an empty context",
                    e.id
                )))
            }
            Phase::Initiation if e.prompt_len == 0 || e.context_len < e.prompt_len => {
                return Err(SimError::InvalidArgument(format!(
                    "request {} has prompt {} and context {}",
                    e.id, e.prompt_len, e.context_len
                )))
            }
            _ => {}
        }
    }

    let d = model.hidden_dim;
    let f = model.ffn_dim;
    let h = model.num_heads;
    let dh = model.head_dim();
    let bpp = model.bytes_per_param;
    let tokens: u64 = batch.iter().map(BatchEntry::query_len).sum();
    let phase = if batch.iter().any(|e| e.phase == Phase::Initiation) {
        Phase::Initiation
    } else {
        Phase::Generation
    };

    use OperatorKind::*;
    let op = |kind, layer, dims| OperatorDescriptor::new(kind, layer, phase, dims, bpp);
    let all = LayerIndex::All;
    let batched_ops = vec![
        op(Embedding, LayerIndex::Unlayered, (1, tokens, 1, d)),
        op(LayerNorm, all, (1, tokens, 1, d)),
        op(QKVGen, all, (1, tokens, d, 3 * d)),
        op(OutProj, all, (1, tokens, d, d)),
        op(LayerNorm, all, (1, tokens, 1, d)),
        op(FFN1, all, (1, tokens, d, f)),
        op(FFN2, all, (1, tokens, f, d)),
        // logits only for each sequence's last position
        op(
            LMHead,
            LayerIndex::Unlayered,
            (1, batch.len() as u64, d, model.vocab_size),
        ),
    ];

    let per_request_attention = batch
        .iter()
        .map(|e| {
            let q = e.query_len();
            let c = e.context_len;
            RequestAttention {
                id: e.id,
                score: OperatorDescriptor::attention(Score, e.id, e.phase, (h, q, dh, c), bpp),
                attend: OperatorDescriptor::attention(Attend, e.id, e.phase, (h, q, c, dh), bpp),
            }
        })
        .collect();

    Ok(IterationProfile {
        batched_ops,
        per_request_attention,
        total_tokens: tokens,
        num_layers: model.num_layers,
    })
}
