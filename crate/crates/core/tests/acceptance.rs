//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.

use std::collections::{BTreeMap, HashMap};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use servesim::cli::{run, RunConfig};
use servesim::driver::{Simulation, SimulationConfig};
use servesim::engine::{simulate_operator, DeviceConfig, NpuConfig, ReuseMode};
use servesim::graph::{
    CommOp, ExecGraph, GraphNode, MemOp, NodeKind, NodeLabel, ParallelMode, ParallelismConfig,
};
use servesim::model::{
    profile_operators, BatchEntry, LayerIndex, ModelConfig, OperatorDescriptor, OperatorKind, Phase,
};
use servesim::scheduler::{BatchPlan, PageOp, PimType, SchedulerEvent};
use servesim::syssim::{
    collective_time, critical_path, simulate_graph, Link, NetworkConfig, Topology,
};
use servesim::workload::{synthesize_poisson, write_trace, Request};
use servesim::SimTime;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);
type ReuseRun = (Vec<SimTime>, (u64, u64), u64);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("roofline oracle", roofline_oracle),
        ("profile oracle", profile_oracle),
        ("reuse cache", reuse_cache),
        ("tensor-parallel scaling", tp_scaling),
        ("memory model", memory_model),
        ("event simulator oracle", des_oracle),
        ("scalability", scalability),
        ("end-to-end determinism", determinism),
        ("PIM overlap", pim_overlap),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let t = Instant::now();
        let result = f();
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS [{}] {name} ({secs:.2}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {name} ({secs:.2}s): {detail}", i + 1)
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------- 1

/// Walks every output tile and counts its fill, stream and drain cycles.
fn brute_force_cycles(m: u64, k: u64, n: u64, rows: u64, cols: u64) -> u64 {
    let mut cycles = 0;
    let mut r0 = 0;
    while r0 < m {
        let mut c0 = 0;
        while c0 < n {
            let mut tile = 0;
            for _ in 0..rows {
                tile += 1;
            }
            for _ in 0..k {
                tile += 1;
            }
            for _ in 0..cols {
                tile += 1;
            }
            cycles += tile;
            c0 += cols;
        }
        r0 += rows;
    }
    cycles
}

fn roofline_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let npu = NpuConfig::default();
    let device = DeviceConfig::Npu(npu.clone());
    for _ in 0..200 {
        let (m, k, n) = (
            rng.random_range(1..=1024u64),
            rng.random_range(1..=1024u64),
            rng.random_range(1..=1024u64),
        );
        let desc = OperatorDescriptor::new(
            OperatorKind::FFN1,
            LayerIndex::All,
            Phase::Initiation,
            (1, m, k, n),
            2,
        );
        let got = simulate_operator(&desc, &device).map_err(|e| e.to_string())?;
        let cycles = brute_force_cycles(m, k, n, npu.array_rows, npu.array_cols);
        let compute = cycles as f64 / npu.clock_hz;
        let memory = ((k * n + m * k + m * n) * 2) as f64 / npu.mem_bw;
        let want = compute.max(memory) + npu.launch_overhead;
        check(
            got.latency == want,
            format!("({m},{k},{n}): engine {} vs oracle {want}", got.latency),
        )?;
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 10.0, format!("took {secs:.2}s"))?;
    Ok(format!("200 GEMMs exact, {secs:.3}s"))
}

// ---------------------------------------------------------------- 2

fn naive_flops(model: &ModelConfig, batch: &[BatchEntry]) -> u64 {
    let (d, f, h, v) = (
        model.hidden_dim,
        model.ffn_dim,
        model.num_heads,
        model.vocab_size,
    );
    let dh = d / h;
    let mut total = 0;
    for _layer in 0..model.num_layers {
        for e in batch {
            let q = e.query_len();
            let c = e.context_len;
            total += 2 * 5 * q * d; // two layer norms
            total += 2 * q * d * 3 * d;
            for _head in 0..h {
                total += 2 * q * dh * c; // scores
                total += 2 * q * c * dh; // weighted values
            }
            total += 2 * q * d * d;
            total += 2 * q * d * f + 2 * q * f * d;
        }
    }
    for _ in batch {
        total += 2 * d * v;
    }
    total
}

fn profile_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..50 {
        let h = [1u64, 2, 4, 8, 12][rng.random_range(0..5)];
        let dh = [16u64, 32, 64][rng.random_range(0..3)];
        let model = ModelConfig::new(
            "random",
            rng.random_range(1..=24),
            h * dh,
            h,
            Some(rng.random_range(1..=8) * 64),
            rng.random_range(100..=60_000),
            2,
        )
        .map_err(|e| e.to_string())?;
        let size = rng.random_range(1..=16);
        let batch: Vec<BatchEntry> = (0..size)
            .map(|i| {
                if rng.random_bool(0.3) {
                    let p = rng.random_range(1..=512);
                    BatchEntry {
                        id: i,
                        phase: Phase::Initiation,
                        prompt_len: p,
                        context_len: p,
                    }
                } else {
                    BatchEntry {
                        id: i,
                        phase: Phase::Generation,
                        prompt_len: 0,
                        context_len: rng.random_range(1..=4096),
                    }
                }
            })
            .collect();
        let profile = profile_operators(&model, &batch).map_err(|e| e.to_string())?;
        let want = naive_flops(&model, &batch);
        check(
            profile.total_flops() == want,
            format!(
                "case {case}: replicated {} vs naive {want}",
                profile.total_flops()
            ),
        )?;
    }
    Ok("50 random (model, batch) pairs exact".into())
}

// ---------------------------------------------------------------- 3

fn reuse_cache() -> Outcome {
    let run_mode = |mode: ReuseMode| -> Result<ReuseRun, String> {
        let mut cfg = SimulationConfig::new(
            ModelConfig::preset("gpt2").unwrap(),
            ParallelismConfig::new(ParallelMode::Tensor, 1, 1).unwrap(),
        );
        cfg.reuse = mode;
        cfg.skip_initiation = true;
        let reqs = (0..16)
            .map(|i| Request::new(i, 0, 64 + 37 * i as u32, 100))
            .collect();
        let mut sim = Simulation::new(cfg, reqs).map_err(|e| e.to_string())?;
        let mut latencies = Vec::new();
        let mut after_first = (0, 0);
        while let Some(r) = sim.step().map_err(|e| e.to_string())? {
            if r.batch.len() != 16 {
                return Err(format!("batch changed size at iteration {}", r.index));
            }
            latencies.push(r.stats.latency);
            if r.index == 0 {
                after_first = sim.stack().invocations();
            }
        }
        let (a, o) = sim.stack().invocations();
        Ok((latencies, (a - after_first.0, o - after_first.1), a + o))
    };
    let (on_lat, on_later, on_total) = run_mode(ReuseMode::On)?;
    let (off_lat, _, off_total) = run_mode(ReuseMode::Off)?;
    check(on_lat.len() == 100, format!("{} iterations", on_lat.len()))?;
    check(
        on_lat == off_lat,
        "latencies differ between cache on and off",
    )?;
    check(
        on_later.1 == 0,
        format!("{} non-attention invocations after iteration 1", on_later.1),
    )?;
    let ratio = off_total as f64 / on_total as f64;
    check(ratio >= 5.0, format!("invocation drop only {ratio:.2}x"))?;
    Ok(format!(
        "100 identical latencies, 0 non-attention calls after iteration 1, {off_total} -> {on_total} calls ({ratio:.1}x)"
    ))
}

// ---------------------------------------------------------------- 4

fn tp_sim(g: usize, ideal: bool) -> Result<(SimTime, ExecGraph), String> {
    let mut cfg = SimulationConfig::new(
        ModelConfig::preset("gpt3-7b").unwrap(),
        ParallelismConfig::new(ParallelMode::Tensor, g, 1).unwrap(),
    );
    if ideal {
        cfg.network = NetworkConfig {
            link_bw_gbps: f64::INFINITY,
            link_latency_ns: 0.0,
            ..NetworkConfig::default()
        };
    }
    let mut sim = Simulation::new(cfg, vec![]).map_err(|e| e.to_string())?;
    let plan = BatchPlan {
        members: (0..4)
            .map(|i| BatchEntry {
                id: i,
                phase: Phase::Initiation,
                prompt_len: 512,
                context_len: 512,
            })
            .collect(),
        loads: vec![],
    };
    let detail = sim.simulate_batch(&plan, &[]).map_err(|e| e.to_string())?;
    Ok((detail.outcome.iteration_latency, detail.graph))
}

fn tp_scaling() -> Outcome {
    let model = ModelConfig::preset("gpt3-7b").unwrap();
    let layers = model.num_layers as usize;
    let (base, _) = tp_sim(1, true)?;
    let mut notes = Vec::new();
    for g in [2usize, 4, 8] {
        check(
            model.hidden_dim.is_multiple_of(128 * g as u64)
                && model.ffn_dim.is_multiple_of(128 * g as u64),
            "model dims not multiples of 128 g",
        )?;
        let (ideal, _) = tp_sim(g, true)?;
        let ratio = ideal.as_secs_f64() * g as f64 / base.as_secs_f64();
        check(
            (ratio - 1.0).abs() <= 0.02,
            format!("g={g}: latency x g / base = {ratio:.4}"),
        )?;
        let (real, graph) = tp_sim(g, false)?;
        let reduces = graph.count_comm(CommOp::AllReduce);
        check(
            reduces == 2 * layers,
            format!("g={g}: {reduces} all-reduces"),
        )?;
        let bytes = 2048 * model.hidden_dim * model.bytes_per_param;
        let one = SimTime::from_secs_f64(
            collective_time(bytes, g, Link::default()).map_err(|e| e.to_string())?,
        );
        let extra = real.saturating_sub(ideal);
        let want = SimTime::from_picos(one.as_picos() * 2 * layers as u64);
        check(
            extra == want,
            format!("g={g}: communication adds {extra}, expected {want}"),
        )?;
        notes.push(format!("g={g} ratio {ratio:.4}"));
    }
    Ok(format!(
        "{}; default links add exactly 2L all-reduces",
        notes.join(", ")
    ))
}

// ---------------------------------------------------------------- 5

fn memory_model() -> Outcome {
    let mut cfg = SimulationConfig::new(
        ModelConfig::preset("gpt2").unwrap(),
        ParallelismConfig::new(ParallelMode::Tensor, 1, 1).unwrap(),
    );
    cfg.npu_mem = 320 << 20;
    let pairs = [(64, 32), (128, 64), (256, 128), (512, 256), (32, 512)];
    let reqs = synthesize_poisson(40.0, 1000, &pairs, 5).map_err(|e| e.to_string())?;
    let mut sim = Simulation::new(cfg, reqs).map_err(|e| e.to_string())?;
    let capacity = sim.state().page_table.capacity_pages();
    let mut bytes: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    while let Some(rec) = sim.step().map_err(|e| e.to_string())? {
        let table = &sim.state().page_table;
        check(
            table.resident_total() <= capacity && table.is_consistent(),
            format!(
                "iteration {}: {} pages resident of {capacity}",
                rec.index,
                table.resident_total()
            ),
        )?;
        for ev in &rec.page_events {
            let e = bytes.entry(ev.request).or_default();
            match ev.op {
                PageOp::Store => e.0 += ev.bytes,
                PageOp::Load => e.1 += ev.bytes,
            }
        }
    }

    // replay admissions to check eviction order
    let mut running: Vec<u64> = Vec::new();
    let mut evictions = 0;
    let mut evicted = std::collections::BTreeSet::new();
    for (iter, ev) in sim.state().events() {
        match *ev {
            SchedulerEvent::Admitted { id, .. } => running.push(id),
            SchedulerEvent::Evicted { id, .. } => {
                check(
                    running.last() == Some(&id),
                    format!(
                        "iteration {iter}: evicted {id} but {:?} was admitted last",
                        running.last()
                    ),
                )?;
                running.pop();
                evictions += 1;
                evicted.insert(id);
            }
            SchedulerEvent::Finished { id } => running.retain(|&r| r != id),
        }
    }
    check(evictions > 0, "memory never ran short")?;
    let s = sim.summary(std::time::Duration::ZERO);
    check(
        s.all_finished(),
        format!("{} of {} finished", s.finished, s.requests),
    )?;
    let finished: std::collections::BTreeSet<u64> =
        sim.state().finished.iter().map(|r| r.id).collect();
    check(
        evicted.iter().all(|id| finished.contains(id)),
        "an evicted request never finished",
    )?;
    for (id, (store, load)) in &bytes {
        check(
            store == load,
            format!("request {id}: stored {store} B, loaded {load} B"),
        )?;
    }
    Ok(format!(
        "{capacity} pages, {evictions} LIFO evictions of {} requests, all 1000 finished, bytes balance",
        evicted.len()
    ))
}

// ---------------------------------------------------------------- 6

/// Durations at one byte per picosecond and zero latency.
fn oracle_duration(node: &GraphNode) -> u64 {
    match &node.kind {
        NodeKind::Compute { duration, .. } => duration.as_picos(),
        NodeKind::Mem { bytes, .. } => *bytes,
        NodeKind::Comm { op, bytes, group } => match op {
            CommOp::AllReduce => {
                let g = group.len() as u64;
                2 * (g - 1) * bytes / g
            }
            CommOp::Send | CommOp::Transfer => *bytes,
            CommOp::Recv => 0,
        },
    }
}

/// Tick-by-tick list scheduling: at every picosecond, repeatedly retire
/// finished nodes and start ready nodes in `priority` order while their
/// devices are idle.
fn tick_schedule(graph: &ExecGraph, priority: &[usize], devices: usize) -> Vec<(u64, u64)> {
    let n = graph.len();
    let dur: Vec<u64> = graph.nodes().iter().map(oracle_duration).collect();
    let mut start = vec![None; n];
    let mut done = vec![false; n];
    let mut busy = vec![None::<usize>; devices];
    let mut t = 0u64;
    while done.iter().any(|d| !d) {
        loop {
            let mut changed = false;
            for id in 0..n {
                if let Some(s) = start[id] {
                    if !done[id] && s + dur[id] == t {
                        done[id] = true;
                        for &d in graph.node(id).devices() {
                            busy[d] = None;
                        }
                        changed = true;
                    }
                }
            }
            for &id in priority {
                let node = graph.node(id);
                let ready = start[id].is_none()
                    && node.deps.iter().all(|&d| done[d])
                    && node.devices().iter().all(|&d| busy[d].is_none());
                if ready {
                    start[id] = Some(t);
                    for &d in node.devices() {
                        busy[d] = Some(id);
                    }
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        t += 1;
    }
    (0..n)
        .map(|i| (start[i].unwrap(), start[i].unwrap() + dur[i]))
        .collect()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn random_dag(rng: &mut ChaCha8Rng, devices: usize) -> ExecGraph {
    let n = rng.random_range(1..=6);
    let mut g = ExecGraph::new();
    for i in 0..n {
        let deps: Vec<usize> = (0..i).filter(|_| rng.random_bool(0.4)).collect();
        let dev = rng.random_range(0..devices);
        let kind = match rng.random_range(0..6) {
            0 => {
                let mut group: Vec<usize> = (0..devices).filter(|_| rng.random_bool(0.6)).collect();
                if group.len() < 2 {
                    group = vec![0, 1];
                }
                NodeKind::Comm {
                    op: CommOp::AllReduce,
                    bytes: 6 * rng.random_range(1..=3),
                    group,
                }
            }
            1 => NodeKind::Comm {
                op: CommOp::Transfer,
                bytes: rng.random_range(1..=5),
                group: vec![dev],
            },
            2 => NodeKind::Comm {
                op: CommOp::Recv,
                bytes: 1,
                group: vec![dev],
            },
            3 => NodeKind::Mem {
                op: MemOp::Store,
                bytes: rng.random_range(1..=5),
                device: dev,
            },
            _ => NodeKind::Compute {
                duration: SimTime::from_picos(rng.random_range(1..=6)),
                device: dev,
            },
        };
        g.push(kind, NodeLabel::default(), deps);
    }
    g
}

fn des_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let devices = 3;
    let one_per_ps = Link::new(1e12, 0.0).unwrap();
    let topo = Topology::new(devices, one_per_ps, one_per_ps);
    let perms: Vec<Vec<Vec<usize>>> = (0..=6).map(permutations).collect();
    let mut beaten = 0;
    for case in 0..1000 {
        let graph = random_dag(&mut rng, devices);
        let out = simulate_graph(&graph, &topo).map_err(|e| format!("case {case}: {e}"))?;
        let identity: Vec<usize> = (0..graph.len()).collect();
        let want = tick_schedule(&graph, &identity, devices);
        for (id, &(s, f)) in want.iter().enumerate() {
            check(
                out.start[id].as_picos() == s && out.finish[id].as_picos() == f,
                format!(
                    "case {case} node {id}: simulated [{}, {}] vs enumerated [{s}, {f}]\n{}",
                    out.start[id].as_picos(),
                    out.finish[id].as_picos(),
                    graph.dump()
                ),
            )?;
        }
        let makespan = out.iteration_latency.as_picos();
        let best = perms[graph.len()]
            .iter()
            .map(|p| {
                tick_schedule(&graph, p, devices)
                    .iter()
                    .map(|x| x.1)
                    .max()
                    .unwrap_or(0)
            })
            .min()
            .unwrap_or(0);
        check(
            makespan >= best,
            format!("case {case}: {makespan} below optimum {best}"),
        )?;
        let cp = critical_path(&graph, &topo)
            .map_err(|e| e.to_string())?
            .as_picos();
        check(
            makespan >= cp,
            format!("case {case}: {makespan} below critical path {cp}"),
        )?;
        if makespan > best {
            beaten += 1;
        }
    }
    Ok(format!(
        "1000 DAGs match enumeration exactly ({beaten} where another priority order is shorter)"
    ))
}

// ---------------------------------------------------------------- 7

fn scalability() -> Outcome {
    let model = ModelConfig::preset("gpt3-7b").unwrap();
    let plan = BatchPlan {
        members: (0..32)
            .map(|i| BatchEntry {
                id: i,
                phase: Phase::Generation,
                prompt_len: 256,
                context_len: 512 + 16 * i,
            })
            .collect(),
        loads: vec![],
    };
    let mut points = Vec::new();
    for n in [8usize, 32, 128, 512] {
        let mut best = f64::INFINITY;
        for _ in 0..3 {
            let t = Instant::now();
            let cfg = SimulationConfig::new(
                model.clone(),
                ParallelismConfig::new(ParallelMode::Tensor, n, 1).unwrap(),
            );
            let mut sim = Simulation::new(cfg, vec![]).map_err(|e| e.to_string())?;
            sim.simulate_batch(&plan, &[]).map_err(|e| e.to_string())?;
            best = best.min(t.elapsed().as_secs_f64());
        }
        points.push((n as f64, best));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = sxy * sxy / (sxx * syy);
    let detail: Vec<String> = points
        .iter()
        .map(|(n, t)| format!("N={n}: {:.1} ms", t * 1e3))
        .collect();
    let last = points.last().unwrap().1;
    check(last < 60.0, format!("N=512 took {last:.1}s"))?;
    check(
        slope <= 1.1,
        format!(
            "log-log slope {slope:.3} (R^2 {r2:.3}); {}",
            detail.join(", ")
        ),
    )?;
    Ok(format!(
        "slope {slope:.3} (R^2 {r2:.3}); {}",
        detail.join(", ")
    ))
}

// ---------------------------------------------------------------- 8

fn determinism() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let trace = dir.path().join("trace.tsv");
    let pairs = [(128, 64), (256, 128), (512, 64), (64, 256), (1024, 32)];
    let reqs = synthesize_poisson(16.0, 256, &pairs, 8).map_err(|e| e.to_string())?;
    write_trace(&trace, &reqs).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run_idx in 0..2 {
        let prefix = dir.path().join(format!("run{run_idx}"));
        let config = RunConfig {
            npu_num: 16,
            npu_group: 4,
            dataset: Some(trace.clone()),
            output: prefix.to_string_lossy().into_owned(),
            ..RunConfig::default()
        };
        let mut sink = Vec::new();
        let summary = run(&config, &mut sink).map_err(|e| e.to_string())?;
        check(summary.all_finished(), "run left requests unfinished")?;
        let tp = std::fs::read(format!("{}-throughput.tsv", config.output))
            .map_err(|e| e.to_string())?;
        let st = std::fs::read_to_string(format!("{}-simulation-time.tsv", config.output))
            .map_err(|e| e.to_string())?;
        let components: Vec<String> = st
            .lines()
            .map(|l| l.split('\t').next().unwrap().to_string())
            .collect();
        outputs.push((tp, components, sink));
    }
    check(outputs[0].0 == outputs[1].0, "throughput TSVs differ")?;
    check(
        outputs[0].1 == outputs[1].1,
        "simulation-time TSV layout differs",
    )?;
    let strip = |s: &[u8]| -> Vec<String> {
        String::from_utf8_lossy(s)
            .lines()
            .filter(|l| l.starts_with("iter="))
            .map(String::from)
            .collect()
    };
    check(
        strip(&outputs[0].2) == strip(&outputs[1].2),
        "progress lines differ",
    )?;
    let secs = start.elapsed().as_secs_f64();
    check(secs < 300.0, format!("took {secs:.1}s"))?;
    Ok(format!(
        "256 requests, throughput TSV byte-identical ({} rows), simulation-time TSV rows match, {secs:.1}s",
        String::from_utf8_lossy(&outputs[0].0).lines().count() - 1
    ))
}

// ---------------------------------------------------------------- 9

fn pim_overlap() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut min_ratio = f64::INFINITY;
    for case in 0..100 {
        let mut cfg = SimulationConfig::new(
            ModelConfig::preset("gpt3-7b").unwrap(),
            ParallelismConfig::new(ParallelMode::Tensor, 1, 1).unwrap(),
        );
        cfg.pim_type = PimType::Pool;
        cfg.sub_batch = true;
        let mut sim = Simulation::new(cfg, vec![]).map_err(|e| e.to_string())?;
        let size = rng.random_range(2..=32);
        let plan = BatchPlan {
            members: (0..size)
                .map(|i| BatchEntry {
                    id: i,
                    phase: Phase::Generation,
                    prompt_len: 0,
                    context_len: rng.random_range(1..=2048),
                })
                .collect(),
            loads: vec![],
        };
        let detail = sim.simulate_batch(&plan, &[]).map_err(|e| e.to_string())?;
        check(
            detail.trace.sub_batches.len() == 2,
            format!(
                "case {case}: {} sub-batches",
                detail.trace.sub_batches.len()
            ),
        )?;
        let topo = sim.topology();
        let layout = sim.graph_context().layout;
        let mut npu_work = HashMap::new();
        let durations =
            servesim::syssim::node_durations(&detail.graph, topo).map_err(|e| e.to_string())?;
        for (node, d) in detail.graph.nodes().iter().zip(&durations) {
            if let NodeKind::Compute { device, .. } = node.kind {
                *npu_work
                    .entry((layout.is_pim(device), node.label.sub_batch))
                    .or_insert(0u64) += d.as_picos();
            }
        }
        check(
            npu_work.len() == 4 && npu_work.values().all(|&w| w > 0),
            format!("case {case}: a sub-batch has no NPU or no PIM work"),
        )?;
        let serial: u64 = durations.iter().map(|d| d.as_picos()).sum();
        let makespan = detail.outcome.iteration_latency.as_picos();
        check(
            makespan < serial,
            format!("case {case}: makespan {makespan} ps vs serialized {serial} ps"),
        )?;
        check(
            detail.trace.makespan < detail.trace.serial_time(),
            format!("case {case}: operator schedule does not overlap"),
        )?;
        min_ratio = min_ratio.min(makespan as f64 / serial as f64);
    }
    Ok(format!(
        "100 batches overlap, worst makespan / serialized = {min_ratio:.3}"
    ))
}
