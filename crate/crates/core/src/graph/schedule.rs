use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::engine::{DeviceKind, OpTiming, ProfileTiming};
use crate::error::{Result, SimError};
use crate::model::{IterationProfile, OperatorKind};
use crate::scheduler::{Assignment, MappingPlan};
use crate::time::SimTime;
use crate::workload::RequestId;

/// One operator instance of one sub-batch with its engine latency.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedOp {
    pub kind: OperatorKind,
    /// `None` for embedding and LM head.
    pub layer: Option<u64>,
    pub attention_id: Option<RequestId>,
    /// Batch position of the request for attention ops.
    pub position: Option<usize>,
    pub resource: DeviceKind,
    /// Needs interconnect transfers around it.
    pub transfer: bool,
    /// Engine latency of one lane, at least 1 ps.
    pub latency: SimTime,
    /// Activation bytes read and written, for transfers.
    pub input_bytes: u64,
    pub output_bytes: u64,
    /// Indices of earlier ops in the same list.
    pub deps: Vec<usize>,
}

/// The timed operator list of one sub-batch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SubBatchOps {
    pub index: usize,
    pub total_tokens: u64,
    pub ops: Vec<TimedOp>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduledOp {
    pub sub_batch: usize,
    pub index: usize,
    pub resource: DeviceKind,
    pub start: SimTime,
    pub finish: SimTime,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScheduledTrace {
    pub sub_batches: Vec<SubBatchOps>,
    /// Every op exactly once, in issue order.
    pub order: Vec<ScheduledOp>,
    pub makespan: SimTime,
}

impl ScheduledTrace {
    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Sum of all op latencies, as if nothing overlapped.
    pub fn serial_time(&self) -> SimTime {
        self.sub_batches
            .iter()
            .flat_map(|s| &s.ops)
            .fold(SimTime::ZERO, |acc, op| acc + op.latency)
    }

    pub fn op(&self, s: &ScheduledOp) -> &TimedOp {
        &self.sub_batches[s.sub_batch].ops[s.index]
    }
}

fn timed(
    t: &OpTiming,
    a: Assignment,
    layer: Option<u64>,
    request: Option<(RequestId, usize)>,
    bpp: u64,
    deps: Vec<usize>,
) -> TimedOp {
    let d = &t.desc;
    TimedOp {
        kind: d.kind,
        layer,
        attention_id: request.map(|r| r.0),
        position: request.map(|r| r.1),
        resource: a.device,
        transfer: a.transfer,
        latency: SimTime::from_secs_f64(t.result.latency).max(SimTime::from_picos(1)),
        input_bytes: d.batch * d.m * d.k * bpp,
        output_bytes: d.batch * d.m * d.n * bpp,
        deps,
    }
}

/// Expands a replicated block into the per-layer operator list of one
/// sub-batch. `positions` gives each request's position in the full batch.
pub fn lower_profile(
    index: usize,
    profile: &IterationProfile,
    timing: &ProfileTiming,
    mapping: &MappingPlan,
    positions: &[usize],
    bytes_per_param: u64,
) -> Result<SubBatchOps> {
    let n = timing.batched.len();
    if n != 8 || mapping.batched.len() != n || timing.attention.len() != mapping.attention.len() {
        return Err(SimError::InvalidArgument(
            "timing and mapping do not describe the same profile".into(),
        ));
    }
    if positions.len() != timing.attention.len() {
        return Err(SimError::InvalidArgument(
            "one batch position is needed per request".into(),
        ));
    }
    let bpp = bytes_per_param;
    let op = |i: usize, layer: Option<u64>, deps: Vec<usize>| {
        timed(
            &timing.batched[i],
            mapping.batched[i],
            layer,
            None,
            bpp,
            deps,
        )
    };
    let mut ops = Vec::new();
    ops.push(op(0, None, vec![]));
    let mut prev = 0;
    for layer in 0..profile.num_layers {
        let l = Some(layer);
        let ln1 = ops.len();
        ops.push(op(1, l, vec![prev]));
        let qkv = ops.len();
        ops.push(op(2, l, vec![ln1]));
        let mut out_deps = vec![qkv];
        for (j, ((id, score, attend), (_, sa, aa))) in
            timing.attention.iter().zip(&mapping.attention).enumerate()
        {
            let req = Some((*id, positions[j]));
            let s = ops.len();
            ops.push(timed(score, *sa, l, req, bpp, vec![qkv]));
            let a = ops.len();
            ops.push(timed(attend, *aa, l, req, bpp, vec![s]));
            out_deps.push(a);
        }
        let out = ops.len();
        ops.push(op(3, l, out_deps));
        let ln2 = ops.len();
        ops.push(op(4, l, vec![out]));
        let ffn1 = ops.len();
        ops.push(op(5, l, vec![ln2]));
        prev = ops.len();
        ops.push(op(6, l, vec![ffn1]));
    }
    ops.push(op(7, None, vec![prev]));
    Ok(SubBatchOps {
        index,
        total_tokens: profile.total_tokens,
        ops,
    })
}

/// Greedy list scheduling over one NPU and one PIM resource. Ready ops
/// issue in order of ready time, ties broken by `(sub_batch, index)`; an op
/// starts when its resource frees up.
pub fn schedule_operators(sub_batches: Vec<SubBatchOps>) -> Result<ScheduledTrace> {
    let mut remaining: Vec<Vec<usize>> = Vec::with_capacity(sub_batches.len());
    let mut succ: Vec<Vec<Vec<usize>>> = Vec::with_capacity(sub_batches.len());
    let mut ready_at: Vec<Vec<SimTime>> = Vec::with_capacity(sub_batches.len());
    let mut heap = BinaryHeap::new();
    let mut total = 0;
    for (s, sb) in sub_batches.iter().enumerate() {
        let n = sb.ops.len();
        total += n;
        let mut su = vec![Vec::new(); n];
        for (i, op) in sb.ops.iter().enumerate() {
            for &d in &op.deps {
                if d >= n || d == i {
                    return Err(SimError::InvalidArgument(format!(
                        "op {i} of sub-batch {s} has invalid dependency {d}"
                    )));
                }
                su[d].push(i);
            }
        }
        let rem: Vec<usize> = sb.ops.iter().map(|o| o.deps.len()).collect();
        for (i, &r) in rem.iter().enumerate() {
            if r == 0 {
                heap.push(Reverse((SimTime::ZERO, s, i)));
            }
        }
        remaining.push(rem);
        succ.push(su);
        ready_at.push(vec![SimTime::ZERO; n]);
    }

    let mut free = [SimTime::ZERO; 2];
    let slot = |k: DeviceKind| match k {
        DeviceKind::Npu => 0,
        DeviceKind::Pim => 1,
    };
    let mut order = Vec::with_capacity(total);
    let mut makespan = SimTime::ZERO;
    while let Some(Reverse((ready, s, i))) = heap.pop() {
        let op = &sub_batches[s].ops[i];
        let r = slot(op.resource);
        let start = ready.max(free[r]);
        let finish = start + op.latency;
        free[r] = finish;
        makespan = makespan.max(finish);
        order.push(ScheduledOp {
            sub_batch: s,
            index: i,
            resource: op.resource,
            start,
            finish,
        });
        for &v in &succ[s][i] {
            ready_at[s][v] = ready_at[s][v].max(finish);
            remaining[s][v] -= 1;
            if remaining[s][v] == 0 {
                heap.push(Reverse((ready_at[s][v], s, v)));
            }
        }
    }
    if order.len() != total {
        return Err(SimError::Cycle(total - order.len()));
    }
    Ok(ScheduledTrace {
        sub_batches,
        order,
        makespan,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(resource: DeviceKind, us: u64, deps: Vec<usize>) -> TimedOp {
        TimedOp {
            kind: if resource == DeviceKind::Pim {
                OperatorKind::Score
            } else {
                OperatorKind::FFN1
            },
            layer: Some(0),
            attention_id: None,
            position: None,
            resource,
            transfer: false,
            latency: SimTime::from_micros(us),
            input_bytes: 1,
            output_bytes: 1,
            deps,
        }
    }

    fn sub(index: usize, ops: Vec<TimedOp>) -> SubBatchOps {
        SubBatchOps {
            index,
            total_tokens: 1,
            ops,
        }
    }

    #[test]
    fn empty_input_gives_empty_trace() {
        let t = schedule_operators(vec![]).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.makespan, SimTime::ZERO);
    }

    #[test]
    fn single_npu_sub_batch_keeps_program_order() {
        let ops = vec![
            op(DeviceKind::Npu, 3, vec![]),
            op(DeviceKind::Npu, 1, vec![0]),
            op(DeviceKind::Npu, 2, vec![1]),
        ];
        let t = schedule_operators(vec![sub(0, ops)]).unwrap();
        let idx: Vec<usize> = t.order.iter().map(|o| o.index).collect();
        assert_eq!(idx, vec![0, 1, 2]);
        assert_eq!(t.makespan, SimTime::from_micros(6));
    }

    /// All orders of the four ops that respect dependencies, each run
    /// back-to-back per resource in that order; the best makespan.
    fn brute_force(subs: &[SubBatchOps]) -> SimTime {
        let all: Vec<(usize, usize)> = subs
            .iter()
            .enumerate()
            .flat_map(|(s, sb)| (0..sb.ops.len()).map(move |i| (s, i)))
            .collect();
        let mut best = SimTime::MAX;
        permute(
            &all,
            &mut Vec::new(),
            &mut vec![false; all.len()],
            subs,
            &mut best,
        );
        best
    }

    fn permute(
        all: &[(usize, usize)],
        cur: &mut Vec<(usize, usize)>,
        used: &mut Vec<bool>,
        subs: &[SubBatchOps],
        best: &mut SimTime,
    ) {
        if cur.len() == all.len() {
            let mut free = [SimTime::ZERO; 2];
            let mut fin = std::collections::HashMap::new();
            let mut span = SimTime::ZERO;
            for &(s, i) in cur.iter() {
                let o = &subs[s].ops[i];
                let Some(ready) = o
                    .deps
                    .iter()
                    .map(|d| fin.get(&(s, *d)).copied())
                    .try_fold(SimTime::ZERO, |a, f| f.map(|f: SimTime| a.max(f)))
                else {
                    return;
                };
                let r = (o.resource == DeviceKind::Pim) as usize;
                let start = ready.max(free[r]);
                free[r] = start + o.latency;
                fin.insert((s, i), free[r]);
                span = span.max(free[r]);
            }
            *best = (*best).min(span);
            return;
        }
        for k in 0..all.len() {
            if !used[k] {
                used[k] = true;
                cur.push(all[k]);
                permute(all, cur, used, subs, best);
                cur.pop();
                used[k] = false;
            }
        }
    }

    #[test]
    fn two_sub_batches_overlap_npu_and_pim() {
        let subs: Vec<SubBatchOps> = (0..2)
            .map(|i| {
                sub(
                    i,
                    vec![
                        op(DeviceKind::Npu, 50, vec![]),
                        op(DeviceKind::Pim, 30, vec![0]),
                    ],
                )
            })
            .collect();
        let oracle = brute_force(&subs);
        let t = schedule_operators(subs).unwrap();
        assert_eq!(t.serial_time(), SimTime::from_micros(160));
        assert_eq!(oracle, SimTime::from_micros(130));
        assert_eq!(t.makespan, oracle);
        assert!(t.makespan < t.serial_time());
    }

    #[test]
    fn cycle_rejected() {
        let ops = vec![
            op(DeviceKind::Npu, 1, vec![1]),
            op(DeviceKind::Npu, 1, vec![0]),
        ];
        assert!(matches!(
            schedule_operators(vec![sub(0, ops)]),
            Err(SimError::Cycle(2))
        ));
    }
}
