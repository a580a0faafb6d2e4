//! Request traces: loading, writing and Poisson synthesis.
//!
//! Trace files are tab-separated with columns
//! `input_toks<TAB>output_toks<TAB>arrival_ms` and an optional header line.
//! Arrival times are kept as integer microseconds once loaded.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Result, SimError};
use crate::time::SimTime;

pub type RequestId = u64;

/// Lifecycle of a request inside the scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RequestState {
    Waiting,
    Running,
    Evicted,
    Finished,
}

impl RequestState {
    pub fn can_transition_to(self, next: RequestState) -> bool {
        use RequestState::*;
        matches!(
            (self, next),
            (Waiting, Running) | (Running, Evicted) | (Running, Finished) | (Evicted, Running)
        )
    }
}

/// One serving request.
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub id: RequestId,
    /// Arrival on the simulated clock, in microseconds.
    pub arrival_us: u64,
    pub input_len: u32,
    pub output_len: u32,
    pub state: RequestState,
    /// Output tokens produced so far.
    pub generated: u32,
    /// Tokens whose keys/values are held in the KV cache.
    pub context_len: u32,
    /// Whether the prompt has been processed (or was assumed processed).
    pub prefilled: bool,
    pub first_token_at: Option<SimTime>,
    pub finished_at: Option<SimTime>,
}

impl Request {
    pub fn new(id: RequestId, arrival_us: u64, input_len: u32, output_len: u32) -> Self {
        Request {
            id,
            arrival_us,
            input_len,
            output_len,
            state: RequestState::Waiting,
            generated: 0,
            context_len: 0,
            prefilled: false,
            first_token_at: None,
            finished_at: None,
        }
    }

    pub fn arrival(&self) -> SimTime {
        SimTime::from_micros(self.arrival_us)
    }

    /// Moves to `next`, rejecting transitions outside the request lifecycle.
    pub fn transition(&mut self, next: RequestState) -> Result<()> {
        if !self.state.can_transition_to(next) {
            return Err(SimError::InvalidArgument(format!(
                "request {}: illegal state transition {:?} -> {:?}",
                self.id, self.state, next
            )));
        }
        self.state = next;
        Ok(())
    }

    /// End-to-end latency, once finished.
    pub fn latency(&self) -> Option<SimTime> {
        self.finished_at.map(|t| t.saturating_sub(self.arrival()))
    }

    pub fn record(&self) -> TraceRecord {
        TraceRecord {
            input_len: self.input_len,
            output_len: self.output_len,
            arrival_us: self.arrival_us,
        }
    }
}

/// One row of a trace file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TraceRecord {
    pub input_len: u32,
    pub output_len: u32,
    pub arrival_us: u64,
}

impl TraceRecord {
    pub fn arrival_ms(&self) -> f64 {
        self.arrival_us as f64 / 1000.0
    }
}

/// Loads a trace file and returns requests sorted by arrival time.
pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<Request>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    parse_trace(&text, path)
}

/// Parses trace text. `origin` is only used in error messages.
pub fn parse_trace(text: &str, origin: &Path) -> Result<Vec<Request>> {
    let err = |line: usize, message: String| SimError::Trace {
        path: origin.to_path_buf(),
        line,
        message,
    };

    let mut records = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if idx == 0 && fields[0].parse::<f64>().is_err() {
            // header
            continue;
        }
        if fields.len() != 3 {
            return Err(err(
                line_no,
                format!("expected 3 tab-separated columns, found {}", fields.len()),
            ));
        }
        let input_len = parse_tokens(fields[0]).map_err(|m| err(line_no, m))?;
        let output_len = parse_tokens(fields[1]).map_err(|m| err(line_no, m))?;
        let arrival_us = parse_arrival_ms(fields[2]).map_err(|m| err(line_no, m))?;
        if input_len == 0 || output_len == 0 {
            return Err(err(
                line_no,
                "degenerate request: input and output lengths must be at least 1".into(),
            ));
        }
        records.push(TraceRecord {
            input_len,
            output_len,
            arrival_us,
        });
    }
    Ok(requests_from_records(records))
}

fn parse_tokens(field: &str) -> std::result::Result<u32, String> {
    field
        .parse::<u32>()
        .map_err(|_| format!("token count {field:?} is not a non-negative integer"))
}

fn parse_arrival_ms(field: &str) -> std::result::Result<u64, String> {
    let ms: f64 = field
        .parse()
        .map_err(|_| format!("arrival time {field:?} is not a number"))?;
    if !ms.is_finite() || ms < 0.0 {
        return Err(format!(
            "arrival time {field:?} must be finite and non-negative"
        ));
    }
    Ok((ms * 1000.0).round() as u64)
}

/// Stable-sorts by arrival (file order breaks ties) and assigns ids `0..n`.
pub fn requests_from_records(mut records: Vec<TraceRecord>) -> Vec<Request> {
    records.sort_by_key(|r| r.arrival_us);
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| Request::new(i as RequestId, r.arrival_us, r.input_len, r.output_len))
        .collect()
}

/// Serializes requests in trace format, header included.
pub fn format_trace(requests: &[Request]) -> String {
    let mut out = String::from("input_toks\toutput_toks\tarrival_ms\n");
    for r in requests {
        let _ = writeln!(
            out,
            "{}\t{}\t{}.{:03}",
            r.input_len,
            r.output_len,
            r.arrival_us / 1000,
            r.arrival_us % 1000
        );
    }
    out
}

pub fn write_trace(path: impl AsRef<Path>, requests: &[Request]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_trace(requests)).map_err(|e| SimError::io(path, e))
}

/// Generates `count` requests with exponential inter-arrival gaps of mean
/// `1/rate` seconds. Lengths are drawn uniformly, with replacement, from
/// `length_pairs` of `(input_len, output_len)`.
pub fn synthesize_poisson(
    rate: f64,
    count: usize,
    length_pairs: &[(u32, u32)],
    seed: u64,
) -> Result<Vec<Request>> {
    if rate <= 0.0 || !rate.is_finite() {
        return Err(SimError::InvalidArgument(format!(
            "arrival rate must be positive and finite, got {rate}"
        )));
    }
    if length_pairs.is_empty() {
        return Err(SimError::InvalidArgument(
            "length_pairs must not be empty".into(),
        ));
    }
    if let Some(&(i, o)) = length_pairs.iter().find(|(i, o)| *i == 0 || *o == 0) {
        return Err(SimError::InvalidArgument(format!(
            "degenerate length pair ({i}, {o})"
        )));
    }

    let gaps = Exp::new(rate).map_err(|e| SimError::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t_secs = 0.0_f64;
    let mut out = Vec::with_capacity(count);
    for id in 0..count {
        t_secs += gaps.sample(&mut rng);
        let (input_len, output_len) = length_pairs[rng.random_range(0..length_pairs.len())];
        let arrival_us = (t_secs * 1e6).round() as u64;
        out.push(Request::new(
            id as RequestId,
            arrival_us,
            input_len,
            output_len,
        ));
    }
    Ok(out)
}
