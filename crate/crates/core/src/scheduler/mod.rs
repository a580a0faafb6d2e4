//! Iteration-level batch scheduling with paged KV-cache management.
//!
//! Every iteration the scheduler keeps all running requests in the batch,
//! reloads evicted requests when their pages fit again, and then admits
//! newly arrived requests in arrival order. After the iteration, requests
//! whose context crossed a page boundary get one more page; when memory runs
//! out, the most recently admitted requests are evicted whole to host memory.

mod batch;
mod mapping;
mod paging;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::engine::DeviceConfig;
use crate::error::{Result, SimError};
use crate::graph::ParallelismConfig;
use crate::model::{BatchEntry, Phase};
use crate::syssim::SimOutcome;
use crate::time::SimTime;
use crate::workload::{Request, RequestId, RequestState};

pub use batch::{partition_batch, BatchPlan, PartitionCriteria, SubBatch};
pub use mapping::{assign, map_operators, Assignment, MappingPlan, PimType};
pub use paging::{KvPageTable, MemoryBudget, PageEvent, PageOp};

/// Default tokens per KV page.
pub const DEFAULT_PAGE_SIZE: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KvManage {
    /// Pages allocated on demand as contexts grow; eviction on shortage.
    #[default]
    Vllm,
    /// Pages for the whole prompt + output reserved at admission.
    MaxLen,
}

impl FromStr for KvManage {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vllm" => Ok(KvManage::Vllm),
            "maxlen" => Ok(KvManage::MaxLen),
            other => Err(SimError::Config(format!(
                "unknown kv_manage {other:?}; expected one of vllm, maxlen"
            ))),
        }
    }
}

impl fmt::Display for KvManage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KvManage::Vllm => "vllm",
            KvManage::MaxLen => "maxlen",
        })
    }
}

/// Batch scheduling policy. Only iteration-level scheduling is modeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheduling {
    #[default]
    Orca,
}

impl FromStr for Scheduling {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orca" => Ok(Scheduling::Orca),
            other => Err(SimError::Config(format!(
                "unknown scheduling {other:?}; expected one of orca"
            ))),
        }
    }
}

impl fmt::Display for Scheduling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("orca")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchedulerOptions {
    pub kv_manage: KvManage,
    /// Treat prompts as already processed: requests start in generation.
    pub skip_initiation: bool,
}

impl Default for SchedulerOptions {
    fn default() -> Self {
        SchedulerOptions {
            kv_manage: KvManage::Vllm,
            skip_initiation: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulerEvent {
    /// Admission or reload; `seq` orders admissions for LIFO eviction.
    Admitted {
        id: RequestId,
        seq: u64,
        reload: bool,
    },
    Evicted {
        id: RequestId,
        pages: u64,
    },
    Finished {
        id: RequestId,
    },
}

/// Token counts produced by one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IterationStats {
    pub end: SimTime,
    pub latency: SimTime,
    pub prompt_tokens: u64,
    pub generation_tokens: u64,
    pub finished: usize,
}

impl IterationStats {
    pub fn prompt_tps(&self) -> f64 {
        rate(self.prompt_tokens, self.latency)
    }

    pub fn generation_tps(&self) -> f64 {
        rate(self.generation_tokens, self.latency)
    }
}

fn rate(tokens: u64, span: SimTime) -> f64 {
    if span == SimTime::ZERO {
        0.0
    } else {
        tokens as f64 / span.as_secs_f64()
    }
}

/// All mutable scheduling state. Owned by the driver loop.
#[derive(Debug, Clone)]
pub struct SchedulerState {
    pub clock: SimTime,
    /// Not yet admitted, sorted by arrival.
    pub waiting: VecDeque<Request>,
    /// Admission order; the last entry is the next eviction victim.
    pub running: Vec<Request>,
    pub evicted: Vec<Request>,
    pub finished: Vec<Request>,
    pub page_table: KvPageTable,
    pub devices: Vec<DeviceConfig>,
    pub parallelism: ParallelismConfig,
    pub options: SchedulerOptions,
    pub iteration: u64,
    events: Vec<(u64, SchedulerEvent)>,
    next_seq: u64,
    prompt_tokens: u64,
    generation_tokens: u64,
}

impl SchedulerState {
    pub fn new(
        requests: Vec<Request>,
        page_table: KvPageTable,
        devices: Vec<DeviceConfig>,
        parallelism: ParallelismConfig,
        options: SchedulerOptions,
    ) -> Result<Self> {
        let mut waiting: Vec<Request> = requests;
        if let Some(r) = waiting.iter().find(|r| r.state != RequestState::Waiting) {
            return Err(SimError::InvalidArgument(format!(
                "request {} is not in the Waiting state",
                r.id
            )));
        }
        waiting.sort_by_key(|r| (r.arrival_us, r.id));
        Ok(SchedulerState {
            clock: SimTime::ZERO,
            waiting: waiting.into(),
            running: Vec::new(),
            evicted: Vec::new(),
            finished: Vec::new(),
            page_table,
            devices,
            parallelism,
            options,
            iteration: 0,
            events: Vec::new(),
            next_seq: 0,
            prompt_tokens: 0,
            generation_tokens: 0,
        })
    }

    pub fn is_done(&self) -> bool {
        self.waiting.is_empty() && self.running.is_empty() && self.evicted.is_empty()
    }

    pub fn request_count(&self) -> usize {
        self.waiting.len() + self.running.len() + self.evicted.len() + self.finished.len()
    }

    /// `(iteration, event)` pairs in the order they happened.
    pub fn events(&self) -> &[(u64, SchedulerEvent)] {
        &self.events
    }

    /// Cumulative `(prompt, generation)` tokens.
    pub fn token_totals(&self) -> (u64, u64) {
        (self.prompt_tokens, self.generation_tokens)
    }

    fn log(&mut self, event: SchedulerEvent) {
        self.events.push((self.iteration, event));
    }

    fn admit_seq(&mut self) -> u64 {
        self.next_seq += 1;
        self.next_seq
    }

    fn entry(r: &Request) -> BatchEntry {
        if r.prefilled {
            BatchEntry {
                id: r.id,
                phase: Phase::Generation,
                prompt_len: r.input_len as u64,
                context_len: r.context_len as u64,
            }
        } else {
            BatchEntry {
                id: r.id,
                phase: Phase::Initiation,
                prompt_len: r.input_len as u64,
                context_len: r.input_len as u64,
            }
        }
    }

    /// Pages a request holds at admission.
    fn admission_pages(&self, r: &Request) -> u64 {
        let tokens = match self.options.kv_manage {
            KvManage::Vllm => r.input_len as u64,
            KvManage::MaxLen => (r.input_len + r.output_len) as u64,
        };
        self.page_table.pages_for(tokens)
    }

    /// Most pages the request will ever hold at once.
    fn peak_pages(&self, r: &Request) -> u64 {
        let peak_context = match self.options.kv_manage {
            KvManage::Vllm => (r.input_len + r.output_len - 1) as u64,
            KvManage::MaxLen => (r.input_len + r.output_len) as u64,
        };
        self.page_table
            .pages_for(peak_context)
            .max(self.admission_pages(r))
    }

    /// Whether admission of new requests is postponed by `batch_delay`.
    fn delaying(&self, max_batch: usize, batch_delay: SimTime) -> bool {
        if batch_delay == SimTime::ZERO || !self.running.is_empty() || !self.evicted.is_empty() {
            return false;
        }
        let Some(first) = self.waiting.front() else {
            return false;
        };
        if self.clock >= first.arrival() + batch_delay {
            return false;
        }
        let arrived = self
            .waiting
            .iter()
            .take_while(|r| r.arrival() <= self.clock)
            .count();
        max_batch == 0 || arrived < max_batch
    }

    /// Selects the requests for the next iteration.
    ///
    /// `max_batch = 0` means unlimited. `batch_delay` holds back a batch made
    /// only of new requests until `batch_delay` after the first of them
    /// arrived, unless `max_batch` requests are already waiting.
    pub fn form_batch(&mut self, max_batch: usize, batch_delay: SimTime) -> Result<BatchPlan> {
        let limit = if max_batch == 0 {
            usize::MAX
        } else {
            max_batch
        };
        let mut loads = Vec::new();

        // reload evicted requests, oldest first
        self.evicted.sort_by_key(|r| (r.arrival_us, r.id));
        while let Some(r) = self.evicted.first() {
            if self.running.len() >= limit {
                break;
            }
            let need = self.page_table.pages_for(r.context_len as u64);
            let Some(event) = self.page_table.reload(r.id, need) else {
                break;
            };
            let mut r = self.evicted.remove(0);
            r.transition(RequestState::Running)?;
            let seq = self.admit_seq();
            self.log(SchedulerEvent::Admitted {
                id: r.id,
                seq,
                reload: true,
            });
            self.running.push(r);
            loads.push(event);
        }

        if self.evicted.is_empty() && !self.delaying(max_batch, batch_delay) {
            while self.running.len() < limit {
                let Some(r) = self.waiting.front() else { break };
                if r.arrival() > self.clock {
                    break;
                }
                if self.peak_pages(r) > self.page_table.capacity_pages() {
                    return Err(SimError::Infeasible {
                        request: r.id,
                        reason: format!(
                            "needs {} KV pages but each device holds only {}",
                            self.peak_pages(r),
                            self.page_table.capacity_pages()
                        ),
                    });
                }
                let need = self.admission_pages(r);
                let id = r.id;
                if !self.page_table.try_allocate(id, need) {
                    break;
                }
                let mut r = self.waiting.pop_front().expect("front exists");
                r.transition(RequestState::Running)?;
                r.context_len = r.input_len;
                r.prefilled = self.options.skip_initiation;
                let seq = self.admit_seq();
                self.log(SchedulerEvent::Admitted {
                    id,
                    seq,
                    reload: false,
                });
                self.running.push(r);
            }
        }

        Ok(BatchPlan {
            members: self.running.iter().map(Self::entry).collect(),
            loads,
        })
    }

    /// When the scheduler next has something to do if the current batch is
    /// empty: the next arrival, or the end of a batching delay.
    pub fn next_wake(&self, batch_delay: SimTime) -> Option<SimTime> {
        let next_arrival = self
            .waiting
            .iter()
            .map(Request::arrival)
            .find(|&t| t > self.clock);
        let deadline = self
            .waiting
            .front()
            .map(|r| r.arrival() + batch_delay)
            .filter(|&t| t > self.clock && batch_delay > SimTime::ZERO);
        match (next_arrival, deadline) {
            (Some(a), Some(d)) => Some(a.min(d)),
            (a, d) => a.or(d),
        }
    }

    /// Gives each running request the pages its context now needs, evicting
    /// the most recently admitted requests when memory runs short.
    pub fn grow_or_evict(&mut self) -> Result<Vec<PageEvent>> {
        let mut events = Vec::new();
        if self.options.kv_manage == KvManage::MaxLen {
            return Ok(events);
        }
        let mut i = 0;
        while i < self.running.len() {
            let id = self.running[i].id;
            let want = self
                .page_table
                .pages_for(self.running[i].context_len as u64);
            let need = want.saturating_sub(self.page_table.resident_pages(id));
            if need == 0 {
                i += 1;
                continue;
            }
            while self.page_table.free_pages() < need {
                if self.running.len() == 1 {
                    return Err(SimError::Infeasible {
                        request: id,
                        reason: format!(
                            "context of {} tokens does not fit in {} KV pages",
                            self.running[0].context_len,
                            self.page_table.capacity_pages()
                        ),
                    });
                }
                let mut victim = self.running.pop().expect("non-empty");
                let event = self.page_table.evict(victim.id);
                victim.transition(RequestState::Evicted)?;
                self.log(SchedulerEvent::Evicted {
                    id: victim.id,
                    pages: event.pages,
                });
                events.push(event);
                self.evicted.push(victim);
                if i >= self.running.len() {
                    break;
                }
            }
            if i < self.running.len() {
                let granted = self.page_table.try_allocate(id, need);
                debug_assert!(granted);
                i += 1;
            }
        }
        Ok(events)
    }

    /// Applies one finished iteration: moves the clock, emits one token per
    /// batched request, and retires requests that are done.
    pub fn advance(&mut self, batch: &BatchPlan, outcome: &SimOutcome) -> Result<IterationStats> {
        let latency = outcome.iteration_latency;
        self.clock += latency;
        let now = self.clock;

        let mut prompt_tokens = 0;
        let mut generation_tokens = 0;
        let mut done = Vec::new();
        for member in &batch.members {
            let Some(idx) = self.running.iter().position(|r| r.id == member.id) else {
                return Err(SimError::InvalidArgument(format!(
                    "request {} was batched but is not running",
                    member.id
                )));
            };
            let r = &mut self.running[idx];
            if !r.prefilled {
                r.prefilled = true;
                prompt_tokens += r.input_len as u64;
            }
            r.generated += 1;
            generation_tokens += 1;
            r.context_len = r.input_len + r.generated;
            if r.first_token_at.is_none() {
                r.first_token_at = Some(now);
            }
            if r.generated >= r.output_len {
                done.push(r.id);
            }
        }

        for id in &done {
            let idx = self
                .running
                .iter()
                .position(|r| r.id == *id)
                .expect("present");
            let mut r = self.running.remove(idx);
            self.page_table.release(r.id);
            r.transition(RequestState::Finished)?;
            r.finished_at = Some(now);
            self.log(SchedulerEvent::Finished { id: r.id });
            self.finished.push(r);
        }

        self.prompt_tokens += prompt_tokens;
        self.generation_tokens += generation_tokens;
        self.iteration += 1;
        Ok(IterationStats {
            end: now,
            latency,
            prompt_tokens,
            generation_tokens,
            finished: done.len(),
        })
    }

    /// Checks that every request is in exactly one queue matching its state,
    /// and that page accounting balances.
    pub fn check_invariants(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::InvalidArgument(m));
        let queues: [(&[Request], RequestState); 3] = [
            (&self.running, RequestState::Running),
            (&self.evicted, RequestState::Evicted),
            (&self.finished, RequestState::Finished),
        ];
        for (q, st) in queues {
            if let Some(r) = q.iter().find(|r| r.state != st) {
                return bad(format!(
                    "request {} in {st:?} queue has state {:?}",
                    r.id, r.state
                ));
            }
        }
        if let Some(r) = self
            .waiting
            .iter()
            .find(|r| r.state != RequestState::Waiting)
        {
            return bad(format!(
                "request {} in waiting queue has state {:?}",
                r.id, r.state
            ));
        }
        let mut ids: Vec<RequestId> = self
            .waiting
            .iter()
            .chain(&self.running)
            .chain(&self.evicted)
            .chain(&self.finished)
            .map(|r| r.id)
            .collect();
        let n = ids.len();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != n {
            return bad("a request appears in two queues".into());
        }
        if !self.page_table.is_consistent() {
            return bad("resident + free pages != capacity".into());
        }
        for r in &self.running {
            if r.generated > r.output_len {
                return bad(format!("request {} over-generated", r.id));
            }
        }
        Ok(())
    }
}
