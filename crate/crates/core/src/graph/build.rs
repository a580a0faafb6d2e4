use std::collections::HashMap;

use super::{
    CommOp, DeviceId, ExecGraph, MemOp, NodeId, NodeKind, NodeLabel, ParallelismConfig,
    ScheduledTrace, TimedOp,
};
use crate::engine::DeviceKind;
use crate::error::{Result, SimError};
use crate::model::OperatorKind;
use crate::scheduler::{PageEvent, PageOp, PimType};

/// Device numbering: NPUs are `0..npu_num`; PIM devices follow. With local
/// PIM, NPU `j` owns PIM `npu_num + j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeviceLayout {
    pub npu_num: usize,
    pub pim_type: PimType,
    pub pim_num: usize,
}

impl DeviceLayout {
    pub fn new(npu_num: usize, pim_type: PimType, pim_num: usize) -> Result<Self> {
        let pim_num = match pim_type {
            PimType::None => 0,
            PimType::Local => {
                if pim_num != npu_num {
                    return Err(SimError::Config(format!(
                        "local PIM needs one PIM per NPU, got {pim_num} for {npu_num} NPUs"
                    )));
                }
                pim_num
            }
            PimType::Pool => {
                if pim_num == 0 {
                    return Err(SimError::Config("PIM pool is empty".into()));
                }
                pim_num
            }
        };
        Ok(DeviceLayout {
            npu_num,
            pim_type,
            pim_num,
        })
    }

    pub fn device_count(&self) -> usize {
        self.npu_num + self.pim_num
    }

    pub fn is_pim(&self, device: DeviceId) -> bool {
        device >= self.npu_num && device < self.device_count()
    }
}

/// Everything besides the trace that shapes the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphContext {
    pub par: ParallelismConfig,
    pub layout: DeviceLayout,
    pub hidden_dim: u64,
    pub num_heads: u64,
    pub num_layers: u64,
    pub bytes_per_param: u64,
}

#[derive(Debug, Clone, Default)]
struct Emitted {
    stage: usize,
    /// `(lane, node)` for ops with per-lane nodes.
    lanes: Vec<(usize, NodeId)>,
    /// Single node every dependent waits on (all-reduce, PIM pool transfer).
    sync: Option<NodeId>,
}

impl Emitted {
    fn for_lane(&self, lane: usize) -> Vec<NodeId> {
        if let Some(s) = self.sync {
            return vec![s];
        }
        self.lanes
            .iter()
            .filter(|(l, _)| *l == lane)
            .map(|(_, n)| *n)
            .collect()
    }

    fn all(&self) -> Vec<NodeId> {
        match self.sync {
            Some(s) => vec![s],
            None => self.lanes.iter().map(|(_, n)| *n).collect(),
        }
    }
}

/// Turns a scheduled trace into an execution graph over concrete devices.
///
/// Page stores and loads become memory nodes ahead of all compute; loads
/// gate the embedding. Non-attention operators run on every NPU of the
/// stage owning their layer; attention runs on the lanes given by the
/// attention split, on the NPU or local PIM, or on one pool PIM wrapped in
/// transfers. Tensor-parallel groups all-reduce after the output
/// projection and the second FFN; pipeline boundaries get a send/receive
/// pair per sub-batch.
pub fn build_graph(
    trace: &ScheduledTrace,
    ctx: &GraphContext,
    page_events: &[PageEvent],
) -> Result<ExecGraph> {
    let par = &ctx.par;
    par.validate_layers(ctx.num_layers)?;
    let tp = par.tp_degree();
    let split = par.attention_split(ctx.num_heads)?;
    let layout = &ctx.layout;
    if layout.npu_num != par.npu_num {
        return Err(SimError::Config(
            "device layout and parallelism disagree on the NPU count".into(),
        ));
    }
    let last_stage = par.stages() - 1;

    let mut g = ExecGraph::new();
    let mem_label = NodeLabel::default();
    for ev in page_events
        .iter()
        .filter(|e| e.op == PageOp::Store && e.bytes > 0)
    {
        g.push(
            NodeKind::Mem {
                op: MemOp::Store,
                bytes: ev.bytes,
                device: 0,
            },
            mem_label,
            vec![],
        );
    }
    let loads: Vec<NodeId> = page_events
        .iter()
        .filter(|e| e.op == PageOp::Load && e.bytes > 0)
        .map(|ev| {
            g.push(
                NodeKind::Mem {
                    op: MemOp::Load,
                    bytes: ev.bytes,
                    device: 0,
                },
                mem_label,
                vec![],
            )
        })
        .collect();

    let mut emitted: Vec<Vec<Option<Emitted>>> = trace
        .sub_batches
        .iter()
        .map(|s| vec![None; s.ops.len()])
        .collect();
    let mut recvs: HashMap<(usize, usize), NodeId> = HashMap::new();

    for sched in &trace.order {
        let sb = &trace.sub_batches[sched.sub_batch];
        let op: &TimedOp = &sb.ops[sched.index];
        let stage = match op.layer {
            Some(l) => par.stage_of_layer(l, ctx.num_layers),
            None if op.kind == OperatorKind::LMHead => last_stage,
            None => 0,
        };
        let label = NodeLabel {
            op: Some(op.kind),
            layer: op.layer,
            attention_id: op.attention_id,
            sub_batch: sb.index,
        };
        let activation = sb.total_tokens * ctx.hidden_dim * ctx.bytes_per_param;
        let base = par.stage_devices(stage).start;

        // dependencies per lane; cross-stage deps go through a send/receive pair
        let mut lane_deps = |lane: Option<usize>, g: &mut ExecGraph| -> Result<Vec<NodeId>> {
            let mut deps = Vec::new();
            for &d in &op.deps {
                let e = emitted[sched.sub_batch][d].as_ref().ok_or_else(|| {
                    SimError::InvalidArgument("trace order breaks a dependency".into())
                })?;
                if e.stage != stage {
                    if e.stage + 1 != stage {
                        return Err(SimError::InvalidArgument(
                            "dependency skips a pipeline stage".into(),
                        ));
                    }
                    let key = (sched.sub_batch, e.stage);
                    let recv = match recvs.get(&key) {
                        Some(&r) => r,
                        None => {
                            let boundary = NodeLabel {
                                op: None,
                                layer: None,
                                attention_id: None,
                                sub_batch: sb.index,
                            };
                            let send = g.push(
                                NodeKind::Comm {
                                    op: CommOp::Send,
                                    bytes: activation,
                                    group: par.stage_devices(e.stage).collect(),
                                },
                                boundary,
                                e.all(),
                            );
                            let r = g.push(
                                NodeKind::Comm {
                                    op: CommOp::Recv,
                                    bytes: activation,
                                    group: par.stage_devices(stage).collect(),
                                },
                                boundary,
                                vec![send],
                            );
                            recvs.insert(key, r);
                            r
                        }
                    };
                    deps.push(recv);
                } else {
                    match lane {
                        Some(l) => deps.extend(e.for_lane(l)),
                        None => deps.extend(e.all()),
                    }
                }
            }
            Ok(deps)
        };

        let mut out = Emitted {
            stage,
            ..Default::default()
        };
        if op.kind.is_attention() {
            let position = op.position.ok_or_else(|| {
                SimError::InvalidArgument("attention op without a batch position".into())
            })?;
            if op.transfer {
                if layout.pim_type != PimType::Pool || op.resource != DeviceKind::Pim {
                    return Err(SimError::Mapping(
                        "transfers are only used around pool PIM operators".into(),
                    ));
                }
                let pim = layout.npu_num + position % layout.pim_num;
                let deps = lane_deps(None, &mut g)?;
                let before = g.push(
                    NodeKind::Comm {
                        op: CommOp::Transfer,
                        bytes: op.input_bytes,
                        group: vec![pim],
                    },
                    label,
                    deps,
                );
                let node = g.push(
                    NodeKind::Compute {
                        duration: op.latency,
                        device: pim,
                    },
                    label,
                    vec![before],
                );
                let after = g.push(
                    NodeKind::Comm {
                        op: CommOp::Transfer,
                        bytes: op.output_bytes,
                        group: vec![pim],
                    },
                    label,
                    vec![node],
                );
                out.sync = Some(after);
            } else {
                for lane in split.lanes(position) {
                    let npu = base + lane;
                    let device = match op.resource {
                        DeviceKind::Npu => npu,
                        DeviceKind::Pim if layout.pim_type == PimType::Local => {
                            layout.npu_num + npu
                        }
                        DeviceKind::Pim => {
                            return Err(SimError::Mapping(
                                "PIM operator without a local PIM or transfers".into(),
                            ))
                        }
                    };
                    let deps = lane_deps(Some(lane), &mut g)?;
                    let node = g.push(
                        NodeKind::Compute {
                            duration: op.latency,
                            device,
                        },
                        label,
                        deps,
                    );
                    out.lanes.push((lane, node));
                }
            }
        } else {
            if op.resource != DeviceKind::Npu {
                return Err(SimError::Mapping(format!("{} must run on an NPU", op.kind)));
            }
            for lane in 0..tp {
                let mut deps = lane_deps(Some(lane), &mut g)?;
                if op.kind == OperatorKind::Embedding {
                    deps.extend(&loads);
                }
                let node = g.push(
                    NodeKind::Compute {
                        duration: op.latency,
                        device: base + lane,
                    },
                    label,
                    deps,
                );
                out.lanes.push((lane, node));
            }
            let reduce = matches!(op.kind, OperatorKind::OutProj | OperatorKind::FFN2);
            if reduce && tp > 1 {
                let deps = out.all();
                out.sync = Some(g.push(
                    NodeKind::Comm {
                        op: CommOp::AllReduce,
                        bytes: activation,
                        group: par.stage_devices(stage).collect(),
                    },
                    label,
                    deps,
                ));
            }
        }
        emitted[sched.sub_batch][sched.index] = Some(out);
    }
    Ok(g)
}
