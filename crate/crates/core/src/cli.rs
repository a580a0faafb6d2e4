//! Command-line configuration, the run entry point and TSV reports.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Parser;

use crate::driver::{ComponentTimes, IterationRecord, RunSummary, Simulation, SimulationConfig};
use crate::engine::HardwareConfig;
use crate::error::{Result, SimError};
use crate::graph::{ParallelMode, ParallelismConfig};
use crate::model::ModelConfig;
use crate::scheduler::{KvManage, PimType, Scheduling};
use crate::syssim::NetworkConfig;
use crate::time::SimTime;
use crate::workload::{load_trace, synthesize_poisson, Request};

/// Simulate LLM inference serving on an NPU/PIM cluster.
#[derive(Debug, Clone, PartialEq, Parser)]
#[command(name = "servesim", version, about)]
pub struct RunConfig {
    /// Model preset.
    #[arg(long = "model_name", default_value = "gpt2")]
    pub model_name: String,
    /// Number of NPUs.
    #[arg(long = "npu_num", default_value_t = 16)]
    pub npu_num: usize,
    /// Maximum requests per batch; 0 means no limit.
    #[arg(long = "max_batch", default_value_t = 0)]
    pub max_batch: usize,
    /// Seconds to wait for more requests before starting a fresh batch.
    #[arg(long = "batch_delay", default_value_t = 0.0)]
    pub batch_delay: f64,
    /// Batch scheduling policy: orca.
    #[arg(long = "scheduling", default_value = "orca")]
    pub scheduling: Scheduling,
    /// pipeline, tensor or hybrid.
    #[arg(long = "parallel", default_value = "hybrid")]
    pub parallel: ParallelMode,
    /// Number of pipeline groups for hybrid parallelism.
    #[arg(long = "npu_group", default_value_t = 1)]
    pub npu_group: usize,
    /// Memory per NPU in GiB.
    #[arg(long = "npu_mem", default_value_t = 40.0)]
    pub npu_mem: f64,
    /// KV-cache management: vllm or maxlen.
    #[arg(long = "kv_manage", default_value = "vllm")]
    pub kv_manage: KvManage,
    /// PIM attachment: none, local or pool.
    #[arg(long = "pim_type", default_value = "none")]
    pub pim_type: PimType,
    /// Split each batch in two so NPU and PIM work overlap.
    #[arg(long = "sub_batch")]
    pub sub_batch: bool,
    /// Request trace (TSV: input_toks, output_toks, arrival_ms). A small
    /// synthetic trace is used when omitted.
    #[arg(long = "dataset")]
    pub dataset: Option<PathBuf>,
    /// Network configuration (TOML).
    #[arg(long = "network")]
    pub network: Option<PathBuf>,
    /// Prefix of the report files.
    #[arg(long = "output", default_value = "output")]
    pub output: String,
    /// Skip the initiation phase; requests start generating immediately.
    #[arg(long = "gen")]
    pub gen: bool,
    /// Estimate NPU compute from peak FLOP/s instead of tiling.
    #[arg(long = "fast_run")]
    pub fast_run: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::parse_from(["servesim"])
    }
}

/// Requests used when no dataset is given.
pub fn default_requests() -> Result<Vec<Request>> {
    synthesize_poisson(4.0, 32, &[(128, 32), (256, 64), (512, 128)], 42)
}

impl RunConfig {
    pub fn simulation_config(&self) -> Result<SimulationConfig> {
        let model = ModelConfig::preset(&self.model_name)?;
        let par = ParallelismConfig::new(self.parallel, self.npu_num, self.npu_group)?;
        let network = match &self.network {
            Some(p) => NetworkConfig::load(p)?,
            None => NetworkConfig::default(),
        };
        if let Some(g) = network.groups {
            if g != par.npu_group {
                return Err(SimError::Config(format!(
                    "network config describes {g} groups but the run uses {}",
                    par.npu_group
                )));
            }
        }
        let hardware = match &network.npu_config {
            Some(p) => HardwareConfig::load(p)?,
            None => HardwareConfig::default(),
        };
        if !self.npu_mem.is_finite() || self.npu_mem <= 0.0 {
            return Err(SimError::Config(format!(
                "npu_mem must be positive, got {}",
                self.npu_mem
            )));
        }
        if !self.batch_delay.is_finite() || self.batch_delay < 0.0 {
            return Err(SimError::Config(format!(
                "batch_delay must be non-negative, got {}",
                self.batch_delay
            )));
        }
        let mut cfg = SimulationConfig::new(model, par);
        cfg.hardware = hardware;
        cfg.network = network;
        cfg.pim_type = self.pim_type;
        cfg.sub_batch = self.sub_batch;
        cfg.max_batch = self.max_batch;
        cfg.batch_delay = SimTime::from_secs_f64(self.batch_delay);
        cfg.kv_manage = self.kv_manage;
        cfg.skip_initiation = self.gen;
        cfg.npu_mem = (self.npu_mem * (1u64 << 30) as f64) as u64;
        cfg.fast_run = self.fast_run;
        Ok(cfg)
    }

    pub fn requests(&self) -> Result<Vec<Request>> {
        match &self.dataset {
            Some(p) => load_trace(p),
            None => default_requests(),
        }
    }
}

/// Prompt and generation throughput over one interval ending at `time_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThroughputSample {
    pub time_s: f64,
    pub prompt_tps: f64,
    pub gen_tps: f64,
}

/// Buckets iteration tokens by the interval their iteration ends in. Every
/// interval up to `end` gets a sample, idle ones included.
pub fn throughput_samples(
    records: &[IterationRecord],
    end: SimTime,
    interval: SimTime,
) -> Vec<ThroughputSample> {
    let step = interval.as_picos().max(1);
    let bins = end.as_picos().div_ceil(step) as usize;
    let mut tokens = vec![(0u64, 0u64); bins];
    for r in records {
        let b = (r.stats.end.as_picos().saturating_sub(1) / step) as usize;
        if let Some(t) = tokens.get_mut(b) {
            t.0 += r.stats.prompt_tokens;
            t.1 += r.stats.generation_tokens;
        }
    }
    let secs = interval.as_secs_f64();
    tokens
        .into_iter()
        .enumerate()
        .map(|(i, (p, g))| ThroughputSample {
            time_s: (i + 1) as f64 * secs,
            prompt_tps: p as f64 / secs,
            gen_tps: g as f64 / secs,
        })
        .collect()
}

pub fn format_throughput(samples: &[ThroughputSample]) -> String {
    let mut out = String::from("time_s\tprompt_tps\tgen_tps\n");
    for s in samples {
        let _ = writeln!(
            out,
            "{:.3}\t{:.3}\t{:.3}",
            s.time_s, s.prompt_tps, s.gen_tps
        );
    }
    out
}

pub fn format_simulation_time(times: &ComponentTimes) -> String {
    let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
    let mut out = String::from("component\ttime_ms\n");
    for (name, d) in [
        ("scheduler", times.scheduler),
        ("engine", times.engine),
        ("graphgen", times.graphgen),
        ("syssim", times.syssim),
        ("total", times.total()),
    ] {
        let _ = writeln!(out, "{name}\t{:.3}", ms(d));
    }
    out
}

/// Writes `{prefix}-throughput.tsv` and `{prefix}-simulation-time.tsv`.
pub fn write_reports(
    samples: &[ThroughputSample],
    times: &ComponentTimes,
    prefix: &str,
) -> Result<(PathBuf, PathBuf)> {
    let tp = PathBuf::from(format!("{prefix}-throughput.tsv"));
    let st = PathBuf::from(format!("{prefix}-simulation-time.tsv"));
    write_file(&tp, &format_throughput(samples))?;
    write_file(&st, &format_simulation_time(times))?;
    Ok((tp, st))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| SimError::io(path, e))
}

pub fn progress_line(r: &IterationRecord) -> String {
    let ids: Vec<String> = r.batch.iter().map(|i| i.to_string()).collect();
    format!(
        "iter={} clock_ms={:.3} batch=[{}] prompt_tps={:.3} gen_tps={:.3}",
        r.index,
        r.stats.end.as_millis_f64(),
        ids.join(","),
        r.stats.prompt_tps(),
        r.stats.generation_tps()
    )
}

/// Runs a full simulation, printing progress to `out` and writing reports.
pub fn run(config: &RunConfig, out: &mut dyn Write) -> Result<RunSummary> {
    let sim_config = config.simulation_config()?;
    let requests = config.requests()?;
    let mut sim = Simulation::new(sim_config, requests)?;
    let mut io_err = None;
    let summary = sim.run(|r| {
        if io_err.is_none() {
            if let Err(e) = writeln!(out, "{}", progress_line(r)) {
                io_err = Some(e);
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(SimError::io("<stdout>", e));
    }
    let samples = throughput_samples(sim.records(), summary.clock, SimTime::from_secs_f64(1.0));
    write_reports(&samples, &summary.times, &config.output)?;
    writeln!(
        out,
        "summary: iterations={} simulated_s={:.6} prompt_tps={:.3} gen_tps={:.3} finished={}/{} wall_s={:.3}",
        summary.iterations,
        summary.clock.as_secs_f64(),
        summary.prompt_tps(),
        summary.generation_tps(),
        summary.finished,
        summary.requests,
        summary.wall.as_secs_f64()
    )
    .map_err(|e| SimError::io("<stdout>", e))?;
    Ok(summary)
}
