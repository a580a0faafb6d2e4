//! The iteration loop tying scheduler, engines, graph builder and system
//! simulator together.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use crate::engine::{
    simulate_block_replicated, AnalyticalEngine, DeviceConfig, EngineStack, HardwareConfig,
    Placement, ReuseMode,
};
use crate::error::{Result, SimError};
use crate::graph::{
    build_graph, lower_profile, schedule_operators, AttentionSplit, CommOp, DeviceLayout,
    ExecGraph, GraphContext, MemOp, ParallelismConfig, ScheduledTrace,
};
use crate::model::{profile_operators, ModelConfig, OperatorDescriptor};
use crate::scheduler::{
    assign, map_operators, partition_batch, BatchPlan, IterationStats, KvManage, KvPageTable,
    MemoryBudget, PageEvent, PartitionCriteria, PimType, SchedulerOptions, SchedulerState,
    DEFAULT_PAGE_SIZE,
};
use crate::syssim::{simulate_graph, NetworkConfig, SimOutcome, Topology};
use crate::time::SimTime;
use crate::workload::{Request, RequestId};

/// Everything needed to run a simulation besides the requests.
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub model: ModelConfig,
    pub parallelism: ParallelismConfig,
    pub hardware: HardwareConfig,
    pub network: NetworkConfig,
    pub pim_type: PimType,
    pub sub_batch: bool,
    pub criteria: PartitionCriteria,
    /// 0 means unlimited.
    pub max_batch: usize,
    pub batch_delay: SimTime,
    pub kv_manage: KvManage,
    pub skip_initiation: bool,
    /// Bytes of memory per NPU.
    pub npu_mem: u64,
    pub page_size: u64,
    /// Token count the activation workspace is sized for.
    pub max_batch_tokens: u64,
    pub fast_run: bool,
    pub reuse: ReuseMode,
}

impl SimulationConfig {
    pub fn new(model: ModelConfig, parallelism: ParallelismConfig) -> Self {
        SimulationConfig {
            model,
            parallelism,
            hardware: HardwareConfig::default(),
            network: NetworkConfig::default(),
            pim_type: PimType::None,
            sub_batch: false,
            criteria: PartitionCriteria::TokenCount,
            max_batch: 0,
            batch_delay: SimTime::ZERO,
            kv_manage: KvManage::Vllm,
            skip_initiation: false,
            npu_mem: 40 << 30,
            page_size: DEFAULT_PAGE_SIZE,
            max_batch_tokens: 2048,
            fast_run: false,
            reuse: ReuseMode::On,
        }
    }
}

/// Wall-clock time spent in each component.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ComponentTimes {
    pub scheduler: Duration,
    pub engine: Duration,
    pub graphgen: Duration,
    pub syssim: Duration,
}

impl ComponentTimes {
    pub fn total(&self) -> Duration {
        self.scheduler + self.engine + self.graphgen + self.syssim
    }
}

/// The artifacts of one simulated batch.
#[derive(Debug, Clone)]
pub struct BatchDetail {
    pub trace: ScheduledTrace,
    pub graph: ExecGraph,
    pub outcome: SimOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub index: u64,
    pub start: SimTime,
    pub batch: Vec<RequestId>,
    pub sub_batches: usize,
    pub stats: IterationStats,
    pub nodes: usize,
    pub all_reduces: usize,
    pub stores: usize,
    pub loads: usize,
    /// Page stores from the previous iteration and reloads for this one.
    pub page_events: Vec<PageEvent>,
    pub trace_makespan: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub iterations: u64,
    pub clock: SimTime,
    pub prompt_tokens: u64,
    pub generation_tokens: u64,
    pub requests: usize,
    pub finished: usize,
    pub times: ComponentTimes,
    pub wall: Duration,
}

impl RunSummary {
    pub fn all_finished(&self) -> bool {
        self.finished == self.requests
    }

    pub fn prompt_tps(&self) -> f64 {
        per_second(self.prompt_tokens, self.clock)
    }

    pub fn generation_tps(&self) -> f64 {
        per_second(self.generation_tokens, self.clock)
    }
}

fn per_second(tokens: u64, t: SimTime) -> f64 {
    if t == SimTime::ZERO {
        0.0
    } else {
        tokens as f64 / t.as_secs_f64()
    }
}

pub struct Simulation {
    config: SimulationConfig,
    state: SchedulerState,
    stack: EngineStack,
    ctx: GraphContext,
    topo: Topology,
    split: AttentionSplit,
    pending_stores: Vec<PageEvent>,
    times: ComponentTimes,
    records: Vec<IterationRecord>,
}

impl Simulation {
    pub fn new(config: SimulationConfig, requests: Vec<Request>) -> Result<Self> {
        let model = &config.model;
        model.validate()?;
        let par = config.parallelism;
        par.validate_layers(model.num_layers)?;
        let split = par.attention_split(model.num_heads)?;
        let net = &config.network;
        if let Some(n) = net.npus {
            if n != par.npu_num {
                return Err(SimError::Config(format!(
                    "network config describes {n} NPUs but {} were requested",
                    par.npu_num
                )));
            }
        }
        let pim_num = match config.pim_type {
            PimType::None => 0,
            PimType::Local => par.npu_num,
            PimType::Pool => net.pim_num.unwrap_or(par.npu_num),
        };
        let layout = DeviceLayout::new(par.npu_num, config.pim_type, pim_num)?;
        let topo = net.topology(layout.device_count())?;

        let npu = DeviceConfig::Npu(config.hardware.npu.clone());
        let pim = (config.pim_type != PimType::None)
            .then(|| DeviceConfig::Pim(config.hardware.pim.clone()));
        let mut devices = vec![npu.clone(); par.npu_num];
        devices.extend(std::iter::repeat_n(
            DeviceConfig::Pim(config.hardware.pim.clone()),
            pim_num,
        ));
        let stack = EngineStack::new(
            Box::new(AnalyticalEngine::new(config.fast_run)),
            npu,
            pim,
            config.reuse,
            model.bytes_per_param,
        )?;
        let page_table = KvPageTable::for_model(
            model,
            &par,
            MemoryBudget {
                device_mem: config.npu_mem,
                page_size: config.page_size,
                max_batch_tokens: config.max_batch_tokens,
            },
        )?;
        let state = SchedulerState::new(
            requests,
            page_table,
            devices,
            par,
            SchedulerOptions {
                kv_manage: config.kv_manage,
                skip_initiation: config.skip_initiation,
            },
        )?;
        let ctx = GraphContext {
            par,
            layout,
            hidden_dim: model.hidden_dim,
            num_heads: model.num_heads,
            num_layers: model.num_layers,
            bytes_per_param: model.bytes_per_param,
        };
        Ok(Simulation {
            config,
            state,
            stack,
            ctx,
            topo,
            split,
            pending_stores: Vec::new(),
            times: ComponentTimes::default(),
            records: Vec::new(),
        })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn state(&self) -> &SchedulerState {
        &self.state
    }

    pub fn stack(&self) -> &EngineStack {
        &self.stack
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn graph_context(&self) -> &GraphContext {
        &self.ctx
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn times(&self) -> ComponentTimes {
        self.times
    }

    fn placement(&self, desc: &OperatorDescriptor) -> Placement {
        let a = assign(desc, self.config.pim_type);
        let shards = if !desc.kind.is_attention() {
            self.ctx.par.tp_degree() as u64
        } else if a.transfer {
            1
        } else {
            self.split.head_shards
        };
        Placement {
            device: a.device,
            shards,
        }
    }

    /// Times one batch without touching scheduler state. `page_events` are
    /// the stores and loads that belong to this iteration.
    pub fn simulate_batch(
        &mut self,
        plan: &BatchPlan,
        page_events: &[PageEvent],
    ) -> Result<BatchDetail> {
        let t = Instant::now();
        let subs = partition_batch(plan, self.config.criteria, self.config.sub_batch);
        let positions: HashMap<RequestId, usize> = plan
            .members
            .iter()
            .enumerate()
            .map(|(i, m)| (m.id, i))
            .collect();
        self.times.scheduler += t.elapsed();

        let mut lowered = Vec::with_capacity(subs.len());
        for sb in &subs {
            let t = Instant::now();
            let profile = profile_operators(&self.config.model, &sb.entries)?;
            let mapping = map_operators(
                &profile,
                self.state.devices.as_slice(),
                self.config.pim_type,
            )?;
            self.times.scheduler += t.elapsed();

            let t = Instant::now();
            let timing =
                simulate_block_replicated(&profile, |d| Ok(self.placement(d)), &self.stack)?;
            self.times.engine += t.elapsed();

            let t = Instant::now();
            let pos: Vec<usize> = timing
                .attention
                .iter()
                .map(|(id, _, _)| positions[id])
                .collect();
            lowered.push(lower_profile(
                sb.index,
                &profile,
                &timing,
                &mapping,
                &pos,
                self.config.model.bytes_per_param,
            )?);
            self.times.graphgen += t.elapsed();
        }

        let t = Instant::now();
        let trace = schedule_operators(lowered)?;
        let graph = build_graph(&trace, &self.ctx, page_events)?;
        self.times.graphgen += t.elapsed();

        let t = Instant::now();
        let outcome = simulate_graph(&graph, &self.topo)?;
        self.times.syssim += t.elapsed();
        Ok(BatchDetail {
            trace,
            graph,
            outcome,
        })
    }

    /// Runs one iteration. Returns `None` once every request has finished.
    pub fn step(&mut self) -> Result<Option<IterationRecord>> {
        let t = Instant::now();
        let plan = loop {
            let plan = self
                .state
                .form_batch(self.config.max_batch, self.config.batch_delay)?;
            if !plan.is_empty() {
                break plan;
            }
            if self.state.is_done() {
                self.times.scheduler += t.elapsed();
                return Ok(None);
            }
            let wake = self
                .state
                .next_wake(self.config.batch_delay)
                .ok_or_else(|| {
                    SimError::InvalidArgument("scheduler stalled with requests pending".into())
                })?;
            self.state.clock = wake;
        };
        self.times.scheduler += t.elapsed();

        let start = self.state.clock;
        let mut events = std::mem::take(&mut self.pending_stores);
        events.extend(plan.loads.iter().copied());
        let detail = self.simulate_batch(&plan, &events)?;

        let t = Instant::now();
        let stats = self.state.advance(&plan, &detail.outcome)?;
        self.pending_stores = self.state.grow_or_evict()?;
        self.times.scheduler += t.elapsed();

        let record = IterationRecord {
            index: self.state.iteration - 1,
            start,
            batch: plan.ids(),
            sub_batches: detail.trace.sub_batches.len(),
            stats,
            nodes: detail.graph.len(),
            all_reduces: detail.graph.count_comm(CommOp::AllReduce),
            stores: detail.graph.count_mem(MemOp::Store),
            loads: detail.graph.count_mem(MemOp::Load),
            page_events: events,
            trace_makespan: detail.trace.makespan,
        };
        self.records.push(record.clone());
        Ok(Some(record))
    }

    /// Steps until all requests finish, calling `on_iteration` after each.
    pub fn run(&mut self, mut on_iteration: impl FnMut(&IterationRecord)) -> Result<RunSummary> {
        let wall = Instant::now();
        while let Some(rec) = self.step()? {
            on_iteration(&rec);
        }
        Ok(self.summary(wall.elapsed()))
    }

    pub fn summary(&self, wall: Duration) -> RunSummary {
        let (prompt_tokens, generation_tokens) = self.state.token_totals();
        RunSummary {
            iterations: self.state.iteration,
            clock: self.state.clock,
            prompt_tokens,
            generation_tokens,
            requests: self.state.request_count(),
            finished: self.state.finished.len(),
            times: self.times,
            wall,
        }
    }
}
