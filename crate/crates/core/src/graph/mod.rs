//! Execution graphs for one serving iteration.
//!
//! Timed operators from the engines are ordered by [`schedule_operators`]
//! and expanded by [`build_graph`] into a DAG of compute, communication and
//! memory nodes placed on concrete devices, ready for the system simulator.

mod build;
mod parallel;
mod schedule;

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::error::{Result, SimError};
use crate::model::OperatorKind;
use crate::time::SimTime;
use crate::workload::RequestId;

pub use build::{build_graph, DeviceLayout, GraphContext};
pub use parallel::{AttentionSplit, ParallelMode, ParallelismConfig};
pub use schedule::{
    lower_profile, schedule_operators, ScheduledOp, ScheduledTrace, SubBatchOps, TimedOp,
};

pub type NodeId = usize;
pub type DeviceId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CommOp {
    AllReduce,
    Send,
    Recv,
    Transfer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MemOp {
    Load,
    Store,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeKind {
    Compute {
        duration: SimTime,
        device: DeviceId,
    },
    Comm {
        op: CommOp,
        bytes: u64,
        group: Vec<DeviceId>,
    },
    Mem {
        op: MemOp,
        bytes: u64,
        device: DeviceId,
    },
}

/// What a node stands for, for reports and tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NodeLabel {
    pub op: Option<OperatorKind>,
    pub layer: Option<u64>,
    pub attention_id: Option<RequestId>,
    pub sub_batch: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub label: NodeLabel,
    pub deps: Vec<NodeId>,
}

impl GraphNode {
    /// Devices the node occupies while it runs.
    pub fn devices(&self) -> &[DeviceId] {
        match &self.kind {
            NodeKind::Compute { device, .. } | NodeKind::Mem { device, .. } => {
                std::slice::from_ref(device)
            }
            NodeKind::Comm { group, .. } => group,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match &self.kind {
            NodeKind::Compute { .. } => "compute",
            NodeKind::Comm { op, .. } => match op {
                CommOp::AllReduce => "allreduce",
                CommOp::Send => "send",
                CommOp::Recv => "recv",
                CommOp::Transfer => "transfer",
            },
            NodeKind::Mem { op, .. } => match op {
                MemOp::Load => "load",
                MemOp::Store => "store",
            },
        }
    }
}

/// A DAG of nodes whose ids equal their positions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExecGraph {
    nodes: Vec<GraphNode>,
}

impl ExecGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a graph from arbitrary nodes, checking ids, dependency targets,
    /// node payloads and acyclicity.
    pub fn from_nodes(nodes: Vec<GraphNode>) -> Result<Self> {
        let graph = ExecGraph { nodes };
        graph.validate()?;
        Ok(graph)
    }

    /// Appends a node. Dependencies must already exist, so graphs built this
    /// way are acyclic.
    pub fn push(&mut self, kind: NodeKind, label: NodeLabel, mut deps: Vec<NodeId>) -> NodeId {
        let id = self.nodes.len();
        deps.sort_unstable();
        deps.dedup();
        debug_assert!(deps.iter().all(|&d| d < id));
        self.nodes.push(GraphNode {
            id,
            kind,
            label,
            deps,
        });
        id
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &GraphNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.iter().map(|n| n.deps.len()).sum()
    }

    /// `(from, to)` dependency pairs.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.nodes
            .iter()
            .flat_map(|n| n.deps.iter().map(move |&d| (d, n.id)))
    }

    pub fn count_comm(&self, op: CommOp) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(&n.kind, NodeKind::Comm { op: o, .. } if *o == op))
            .count()
    }

    pub fn count_mem(&self, op: MemOp) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(&n.kind, NodeKind::Mem { op: o, .. } if *o == op))
            .count()
    }

    /// Successor lists.
    pub fn successors(&self) -> Vec<Vec<NodeId>> {
        let mut succ = vec![Vec::new(); self.nodes.len()];
        for (from, to) in self.edges() {
            succ[from].push(to);
        }
        succ
    }

    /// Kahn's algorithm; lower ids first among ready nodes.
    pub fn topological_order(&self) -> Result<Vec<NodeId>> {
        let n = self.nodes.len();
        let succ = self.successors();
        let mut indeg: Vec<usize> = self.nodes.iter().map(|x| x.deps.len()).collect();
        let mut queue: VecDeque<NodeId> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &v in &succ[u] {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    queue.push_back(v);
                }
            }
        }
        if order.len() != n {
            return Err(SimError::Cycle(n - order.len()));
        }
        Ok(order)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i {
                return Err(SimError::InvalidArgument(format!(
                    "node at position {i} has id {}",
                    node.id
                )));
            }
            if let Some(&d) = node.deps.iter().find(|&&d| d >= n) {
                return Err(SimError::InvalidArgument(format!(
                    "node {i} depends on missing node {d}"
                )));
            }
            match &node.kind {
                NodeKind::Compute { duration, .. } if *duration == SimTime::ZERO => {
                    return Err(SimError::InvalidArgument(format!(
                        "compute node {i} has zero duration"
                    )))
                }
                NodeKind::Comm { bytes, group, .. } if *bytes == 0 || group.is_empty() => {
                    return Err(SimError::InvalidArgument(format!(
                        "communication node {i} needs bytes and participants"
                    )))
                }
                NodeKind::Mem { bytes: 0, .. } => {
                    return Err(SimError::InvalidArgument(format!(
                        "memory node {i} moves no bytes"
                    )))
                }
                _ => {}
            }
        }
        self.topological_order().map(|_| ())
    }

    /// Line-oriented dump:
    /// `node_id<TAB>kind<TAB>duration_ps_or_bytes<TAB>home<TAB>deps`, with
    /// multi-device homes joined by `;` and deps by `,`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for node in &self.nodes {
            let amount = match &node.kind {
                NodeKind::Compute { duration, .. } => duration.as_picos(),
                NodeKind::Comm { bytes, .. } | NodeKind::Mem { bytes, .. } => *bytes,
            };
            let home: Vec<String> = node.devices().iter().map(|d| d.to_string()).collect();
            let deps: Vec<String> = node.deps.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                node.id,
                node.kind_name(),
                amount,
                home.join(";"),
                deps.join(",")
            );
        }
        out
    }
}
