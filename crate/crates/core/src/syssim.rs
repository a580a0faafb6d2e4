//! Discrete-event simulation of an execution graph over devices and links.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::engine::GB;
use crate::error::{Result, SimError};
use crate::graph::{CommOp, DeviceId, ExecGraph, NodeId, NodeKind};
use crate::time::SimTime;

/// Alpha-beta link: `bytes / bandwidth + latency`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    /// Bytes per second; may be infinite.
    pub bandwidth: f64,
    /// Seconds.
    pub latency: f64,
}

impl Default for Link {
    fn default() -> Self {
        Link {
            bandwidth: 64.0 * GB,
            latency: 100e-9,
        }
    }
}

impl Link {
    pub fn new(bandwidth: f64, latency: f64) -> Result<Self> {
        if bandwidth.is_nan() || bandwidth <= 0.0 {
            return Err(SimError::Config(format!(
                "link bandwidth must be positive, got {bandwidth}"
            )));
        }
        if !latency.is_finite() || latency < 0.0 {
            return Err(SimError::Config(format!(
                "link latency must be non-negative, got {latency}"
            )));
        }
        Ok(Link { bandwidth, latency })
    }

    /// Infinite bandwidth, zero latency.
    pub fn ideal() -> Self {
        Link {
            bandwidth: f64::INFINITY,
            latency: 0.0,
        }
    }
}

/// Ring all-reduce over `group_size` devices, in seconds.
pub fn collective_time(bytes: u64, group_size: usize, link: Link) -> Result<f64> {
    if group_size < 2 {
        return Err(SimError::InvalidArgument(format!(
            "all-reduce over {group_size} device(s) needs no communication"
        )));
    }
    if bytes == 0 {
        return Err(SimError::InvalidArgument("all-reduce of 0 bytes".into()));
    }
    let g = group_size as f64;
    let steps = 2.0 * (g - 1.0);
    Ok(steps / g * bytes as f64 / link.bandwidth + steps * link.latency)
}

/// Point-to-point transfer time in seconds.
pub fn transfer_time(bytes: u64, link: Link) -> Result<f64> {
    if bytes == 0 {
        return Err(SimError::InvalidArgument("transfer of 0 bytes".into()));
    }
    Ok(bytes as f64 / link.bandwidth + link.latency)
}

/// Devices and the links between them. Links are uniform unless
/// overridden per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub device_count: usize,
    pub link: Link,
    pub host_link: Link,
    overrides: HashMap<(DeviceId, DeviceId), Link>,
}

impl Topology {
    pub fn new(device_count: usize, link: Link, host_link: Link) -> Self {
        Topology {
            device_count,
            link,
            host_link,
            overrides: HashMap::new(),
        }
    }

    /// Defaults everywhere.
    pub fn flat(device_count: usize) -> Self {
        Self::new(device_count, Link::default(), Link::default())
    }

    pub fn set_link(&mut self, a: DeviceId, b: DeviceId, link: Link) -> Result<()> {
        if a >= self.device_count || b >= self.device_count || a == b {
            return Err(SimError::Config(format!("invalid link {a} <-> {b}")));
        }
        self.overrides.insert((a.min(b), a.max(b)), link);
        Ok(())
    }

    pub fn link_between(&self, a: DeviceId, b: DeviceId) -> Link {
        self.overrides
            .get(&(a.min(b), a.max(b)))
            .copied()
            .unwrap_or(self.link)
    }

    /// Bottleneck of the ring through `group` in order.
    pub fn ring_link(&self, group: &[DeviceId]) -> Link {
        let mut out = Link {
            bandwidth: f64::INFINITY,
            latency: 0.0,
        };
        if group.len() < 2 {
            return self.link;
        }
        for (i, &a) in group.iter().enumerate() {
            let b = group[(i + 1) % group.len()];
            let l = self.link_between(a, b);
            out.bandwidth = out.bandwidth.min(l.bandwidth);
            out.latency = out.latency.max(l.latency);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkOverride {
    pub a: DeviceId,
    pub b: DeviceId,
    #[serde(rename = "bw_GBps")]
    pub bw_gbps: f64,
    /// Defaults to the network-wide link latency.
    #[serde(default)]
    pub latency_ns: Option<f64>,
}

/// Network configuration file (TOML).
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// When present, must match the command line.
    pub npus: Option<usize>,
    pub groups: Option<usize>,
    #[serde(rename = "link_bw_GBps")]
    pub link_bw_gbps: f64,
    pub link_latency_ns: f64,
    #[serde(rename = "host_bw_GBps")]
    pub host_bw_gbps: f64,
    pub host_latency_ns: f64,
    /// PIM devices in the pool; defaults to one per NPU.
    pub pim_num: Option<usize>,
    /// Hardware file for NPU and PIM parameters, relative to this file.
    pub npu_config: Option<PathBuf>,
    #[serde(rename = "link")]
    pub links: Vec<LinkOverride>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            npus: None,
            groups: None,
            link_bw_gbps: 64.0,
            link_latency_ns: 100.0,
            host_bw_gbps: 64.0,
            host_latency_ns: 100.0,
            pim_num: None,
            npu_config: None,
            links: Vec::new(),
        }
    }
}

impl NetworkConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SimError::Config(format!("network config: {e}")))
    }

    /// Loads a file; a relative `npu_config` is resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if let (Some(p), Some(dir)) = (&cfg.npu_config, path.parent()) {
            if p.is_relative() {
                cfg.npu_config = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn link(&self) -> Result<Link> {
        Link::new(self.link_bw_gbps * GB, self.link_latency_ns * 1e-9)
    }

    pub fn host_link(&self) -> Result<Link> {
        Link::new(self.host_bw_gbps * GB, self.host_latency_ns * 1e-9)
    }

    pub fn topology(&self, device_count: usize) -> Result<Topology> {
        let mut topo = Topology::new(device_count, self.link()?, self.host_link()?);
        for o in &self.links {
            let latency = o.latency_ns.unwrap_or(self.link_latency_ns);
            topo.set_link(o.a, o.b, Link::new(o.bw_gbps * GB, latency * 1e-9)?)?;
        }
        Ok(topo)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub iteration_latency: SimTime,
    /// Busy time per device.
    pub busy: Vec<SimTime>,
    pub start: Vec<SimTime>,
    pub finish: Vec<SimTime>,
    /// Total duration of communication nodes.
    pub comm_time: SimTime,
}

impl SimOutcome {
    /// An iteration that took `latency` with no per-node detail.
    pub fn from_latency(latency: SimTime) -> Self {
        SimOutcome {
            iteration_latency: latency,
            busy: Vec::new(),
            start: Vec::new(),
            finish: Vec::new(),
            comm_time: SimTime::ZERO,
        }
    }
}

/// How long each node occupies its devices.
pub fn node_durations(graph: &ExecGraph, topo: &Topology) -> Result<Vec<SimTime>> {
    let succ = graph.successors();
    let mut out = Vec::with_capacity(graph.len());
    for node in graph.nodes() {
        for &d in node.devices() {
            if d >= topo.device_count {
                return Err(SimError::UnknownDevice {
                    node: node.id,
                    device: d,
                });
            }
        }
        let secs = match &node.kind {
            NodeKind::Compute { duration, .. } => {
                out.push(*duration);
                continue;
            }
            NodeKind::Mem { bytes, .. } => transfer_time(*bytes, topo.host_link)?,
            NodeKind::Comm { op, bytes, group } => match op {
                CommOp::AllReduce => collective_time(*bytes, group.len(), topo.ring_link(group))?,
                CommOp::Recv => 0.0,
                CommOp::Send => {
                    // the matching receive names the destination
                    let peer = succ[node.id]
                        .iter()
                        .find_map(|&s| match &graph.node(s).kind {
                            NodeKind::Comm {
                                op: CommOp::Recv,
                                group,
                                ..
                            } => group.first().copied(),
                            _ => None,
                        });
                    let link = match peer {
                        Some(p) => topo.link_between(group[0], p),
                        None => topo.link,
                    };
                    transfer_time(*bytes, link)?
                }
                CommOp::Transfer => transfer_time(*bytes, topo.link)?,
            },
        };
        out.push(SimTime::from_secs_f64(secs));
    }
    Ok(out)
}

/// Event-driven list scheduling. At every event time, ready nodes start in
/// increasing id order when all their devices are idle; a node occupies its
/// devices until it finishes.
pub fn simulate_graph(graph: &ExecGraph, topo: &Topology) -> Result<SimOutcome> {
    let n = graph.len();
    let dur = node_durations(graph, topo)?;
    graph.topological_order()?;
    let succ = graph.successors();
    let nodes = graph.nodes();

    let mut remaining: Vec<usize> = nodes.iter().map(|x| x.deps.len()).collect();
    let mut ready: Vec<BTreeSet<NodeId>> = vec![BTreeSet::new(); topo.device_count];
    let mut busy_until: Vec<Option<SimTime>> = vec![None; topo.device_count];
    let mut busy = vec![SimTime::ZERO; topo.device_count];
    let mut start = vec![SimTime::MAX; n];
    let mut finish = vec![SimTime::MAX; n];
    let mut started = vec![false; n];
    let mut events: BinaryHeap<Reverse<(SimTime, NodeId)>> = BinaryHeap::new();
    let mut dirty: BTreeSet<DeviceId> = BTreeSet::new();
    let mut comm_time = SimTime::ZERO;

    for node in nodes.iter().filter(|x| x.deps.is_empty()) {
        for &d in node.devices() {
            ready[d].insert(node.id);
            dirty.insert(d);
        }
    }

    // a device last seen busy for each node, checked first on retries
    let mut hint: Vec<DeviceId> = nodes
        .iter()
        .map(|x| x.devices().first().copied().unwrap_or(0))
        .collect();
    let mut now = SimTime::ZERO;
    let mut done = 0;
    loop {
        // start phase: lowest id first among nodes whose devices are idle
        let mut heap: BinaryHeap<Reverse<(NodeId, DeviceId)>> = dirty
            .iter()
            .filter(|&&d| busy_until[d].is_none())
            .filter_map(|&d| ready[d].first().map(|&id| Reverse((id, d))))
            .collect();
        dirty.clear();
        while let Some(Reverse((id, d))) = heap.pop() {
            if busy_until[d].is_some() {
                continue;
            }
            if started[id] {
                if let Some(&next) = ready[d].first() {
                    heap.push(Reverse((next, d)));
                }
                continue;
            }
            let blocked = busy_until[hint[id]].is_some()
                || match nodes[id]
                    .devices()
                    .iter()
                    .find(|&&e| busy_until[e].is_some())
                {
                    Some(&e) => {
                        hint[id] = e;
                        true
                    }
                    None => false,
                };
            if blocked {
                if let Some(&next) = ready[d].range(id + 1..).next() {
                    heap.push(Reverse((next, d)));
                }
                continue;
            }
            started[id] = true;
            let end = now + dur[id];
            start[id] = now;
            for &dev in nodes[id].devices() {
                ready[dev].remove(&id);
                busy_until[dev] = Some(end);
                busy[dev] += dur[id];
            }
            if matches!(nodes[id].kind, NodeKind::Comm { .. }) {
                comm_time += dur[id];
            }
            events.push(Reverse((end, id)));
        }

        let Some(&Reverse((t, _))) = events.peek() else {
            break;
        };
        now = t;
        while let Some(&Reverse((t2, id))) = events.peek() {
            if t2 != now {
                break;
            }
            events.pop();
            finish[id] = now;
            done += 1;
            for &dev in nodes[id].devices() {
                busy_until[dev] = None;
                dirty.insert(dev);
            }
            for &s in &succ[id] {
                remaining[s] -= 1;
                if remaining[s] == 0 {
                    for &dev in nodes[s].devices() {
                        ready[dev].insert(s);
                        dirty.insert(dev);
                    }
                }
            }
        }
    }
    if done != n {
        return Err(SimError::Cycle(n - done));
    }
    Ok(SimOutcome {
        iteration_latency: finish.iter().copied().max().unwrap_or(SimTime::ZERO),
        busy,
        start,
        finish,
        comm_time,
    })
}

/// Longest dependency chain, ignoring device contention.
pub fn critical_path(graph: &ExecGraph, topo: &Topology) -> Result<SimTime> {
    let dur = node_durations(graph, topo)?;
    let order = graph.topological_order()?;
    let mut fin = vec![SimTime::ZERO; graph.len()];
    for id in order {
        let ready = graph
            .node(id)
            .deps
            .iter()
            .map(|&d| fin[d])
            .max()
            .unwrap_or(SimTime::ZERO);
        fin[id] = ready + dur[id];
    }
    Ok(fin.into_iter().max().unwrap_or(SimTime::ZERO))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{MemOp, NodeLabel};

    fn compute(g: &mut ExecGraph, ms: u64, device: DeviceId, deps: Vec<NodeId>) -> NodeId {
        g.push(
            NodeKind::Compute {
                duration: SimTime::from_picos(ms * SimTime::PS_PER_MS),
                device,
            },
            NodeLabel::default(),
            deps,
        )
    }

    #[test]
    fn collective_closed_form() {
        let t = collective_time(1_048_576, 4, Link::default()).unwrap();
        assert!((t - 25.176e-6).abs() < 1e-9, "{t}");
        let l = Link::default();
        let t2 = collective_time(4096, 2, l).unwrap();
        assert!((t2 - (4096.0 / l.bandwidth + 2.0 * l.latency)).abs() < 1e-15);
        let a = collective_time(1000, 8, Link::new(1e9, 0.0).unwrap()).unwrap();
        let b = collective_time(2000, 8, Link::new(1e9, 0.0).unwrap()).unwrap();
        assert_eq!(b, 2.0 * a);
        assert!(collective_time(10, 1, l).is_err());
    }

    #[test]
    fn transfer_closed_form() {
        let t = transfer_time(64_000_000_000, Link::default()).unwrap();
        assert!((t - 1.0000001).abs() < 1e-12);
        assert!(transfer_time(0, Link::default()).is_err());
        assert_eq!(transfer_time(5, Link::ideal()).unwrap(), 0.0);
    }

    #[test]
    fn single_chain_and_independent() {
        let mut g = ExecGraph::new();
        compute(&mut g, 5, 0, vec![]);
        let o = simulate_graph(&g, &Topology::flat(1)).unwrap();
        assert_eq!(o.iteration_latency.as_millis_f64(), 5.0);

        let mut g = ExecGraph::new();
        let a = compute(&mut g, 2, 0, vec![]);
        let b = compute(&mut g, 3, 0, vec![a]);
        compute(&mut g, 4, 0, vec![b]);
        assert_eq!(
            simulate_graph(&g, &Topology::flat(1))
                .unwrap()
                .iteration_latency
                .as_millis_f64(),
            9.0
        );

        let mut g = ExecGraph::new();
        for (i, ms) in [2, 3, 4].into_iter().enumerate() {
            compute(&mut g, ms, i, vec![]);
        }
        let o = simulate_graph(&g, &Topology::flat(3)).unwrap();
        assert_eq!(o.iteration_latency.as_millis_f64(), 4.0);
        assert_eq!(o.busy[1].as_millis_f64(), 3.0);
    }

    #[test]
    fn lower_id_wins_ties() {
        let mut g = ExecGraph::new();
        compute(&mut g, 2, 0, vec![]);
        compute(&mut g, 1, 0, vec![]);
        let o = simulate_graph(&g, &Topology::flat(1)).unwrap();
        assert_eq!(o.start[0], SimTime::ZERO);
        assert_eq!(o.start[1].as_millis_f64(), 2.0);
    }

    #[test]
    fn collectives_block_all_participants() {
        let mut g = ExecGraph::new();
        let a = compute(&mut g, 1, 0, vec![]);
        g.push(
            NodeKind::Comm {
                op: CommOp::AllReduce,
                bytes: 1 << 20,
                group: vec![0, 1],
            },
            NodeLabel::default(),
            vec![a],
        );
        let c = compute(&mut g, 1, 1, vec![]);
        let topo = Topology::flat(2);
        let o = simulate_graph(&g, &topo).unwrap();
        // device 1 runs its own work first, then the all-reduce waits for both
        assert_eq!(o.start[c], SimTime::ZERO);
        assert_eq!(o.start[1].as_millis_f64(), 1.0);
        let ar = SimTime::from_secs_f64(collective_time(1 << 20, 2, topo.link).unwrap());
        assert_eq!(
            o.iteration_latency,
            SimTime::from_picos(SimTime::PS_PER_MS) + ar
        );
        assert_eq!(o.comm_time, ar);
    }

    #[test]
    fn memory_nodes_use_host_link() {
        let mut g = ExecGraph::new();
        g.push(
            NodeKind::Mem {
                op: MemOp::Store,
                bytes: 8_388_608,
                device: 0,
            },
            NodeLabel::default(),
            vec![],
        );
        let o = simulate_graph(&g, &Topology::flat(1)).unwrap();
        let expect = 8_388_608.0 / 64e9 + 100e-9;
        assert_eq!(o.iteration_latency, SimTime::from_secs_f64(expect));
    }

    #[test]
    fn unknown_device_rejected() {
        let mut g = ExecGraph::new();
        compute(&mut g, 1, 3, vec![]);
        assert!(matches!(
            simulate_graph(&g, &Topology::flat(2)),
            Err(SimError::UnknownDevice { node: 0, device: 3 })
        ));
    }

    #[test]
    fn network_config_parses() {
        let cfg = NetworkConfig::parse(
            "npus = 4\nlink_bw_GBps = 32\n[[link]]\na = 0\nb = 1\nbw_GBps = 16\nlatency_ns = 50\n",
        )
        .unwrap();
        let topo = cfg.topology(4).unwrap();
        assert_eq!(topo.link.bandwidth, 32e9);
        assert_eq!(topo.link_between(1, 0).bandwidth, 16e9);
        assert_eq!(topo.ring_link(&[0, 1, 2]).bandwidth, 16e9);
        assert!(NetworkConfig::parse("bogus = 1").is_err());
        assert!(NetworkConfig::parse("link_bw_GBps = 0")
            .unwrap()
            .link()
            .is_err());
    }
}
