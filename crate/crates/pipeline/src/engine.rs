use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam::channel::{bounded, Receiver, Sender, TrySendError};
use serde::{Deserialize, Serialize};

use crate::budget::{processor_budget, LoopBudget};
use crate::stats::{PipelineStats, StageCounts};
use crate::{PipelineError, Result};

pub const DEFAULT_CAPACITY: usize = 8;

/// A unit of data with the source sample range it was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct Packet<T> {
    pub seq: u64,
    /// `[first, end)` source samples that contributed.
    pub span: (usize, usize),
    pub payload: T,
}

pub type StageFn<T> = Box<dyn FnMut(Packet<T>) -> std::result::Result<Vec<Packet<T>>, String> + Send>;

/// Placement tag of a stage in the acquisition / feature / classify split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTag {
    Acquisition,
    Feature,
    Classify,
    Other,
}

pub struct StageSpec<T> {
    pub name: String,
    pub tag: StageTag,
    /// Capacity of the queue feeding this stage.
    pub capacity: usize,
    /// Nominal compute time per period; zero when undeclared.
    pub duration_ms: f64,
    pub period_ms: f64,
    pub func: StageFn<T>,
}

impl<T> StageSpec<T> {
    pub fn new(name: &str, tag: StageTag, func: StageFn<T>) -> Self {
        StageSpec {
            name: name.to_string(),
            tag,
            capacity: DEFAULT_CAPACITY,
            duration_ms: 0.0,
            period_ms: 0.0,
            func,
        }
    }

    pub fn with_budget(mut self, duration_ms: f64, period_ms: f64) -> Self {
        self.duration_ms = duration_ms;
        self.period_ms = period_ms;
        self
    }

    pub fn with_capacity(mut self, capacity: usize) -> Self {
        self.capacity = capacity;
        self
    }
}

impl<T> std::fmt::Debug for StageSpec<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StageSpec")
            .field("name", &self.name)
            .field("tag", &self.tag)
            .field("capacity", &self.capacity)
            .field("duration_ms", &self.duration_ms)
            .field("period_ms", &self.period_ms)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pacing {
    /// Each source packet is released when its last sample would have been
    /// acquired at `sample_rate_hz`.
    RealTime { sample_rate_hz: f64 },
    /// Packets are pushed as fast as the first queue accepts them.
    Unpaced,
}

enum Msg<T> {
    Data(Packet<T>, Instant),
    End,
}

struct Link<T> {
    tx: Sender<Msg<T>>,
    stalls: Arc<AtomicU64>,
    max_occupancy: usize,
    sent: u64,
}

impl<T> Link<T> {
    fn push(&mut self, m: Msg<T>) -> bool {
        let counted = matches!(m, Msg::Data(..));
        let ok = match self.tx.try_send(m) {
            Ok(()) => true,
            Err(TrySendError::Full(m)) => {
                self.stalls.fetch_add(1, Ordering::Relaxed);
                self.tx.send(m).is_ok()
            }
            Err(TrySendError::Disconnected(_)) => false,
        };
        if ok {
            self.max_occupancy = self.max_occupancy.max(self.tx.len());
            if counted {
                self.sent += 1;
            }
        }
        ok
    }
}

/// Emitted results with their emission instants, plus statistics.
#[derive(Debug)]
pub struct PipelineRun<T> {
    pub results: Vec<Packet<T>>,
    pub stats: PipelineStats,
}

struct StageOutcome {
    counts: StageCounts,
    max_occupancy: usize,
    error: Option<String>,
    /// A queue closed before end of stream, as a consequence of a failure
    /// elsewhere.
    closed: bool,
}

fn spawn_stage<T: Send + 'static>(
    mut spec: StageSpec<T>,
    rx: Receiver<Msg<T>>,
    mut out: Link<T>,
) -> thread::JoinHandle<StageOutcome> {
    thread::Builder::new()
        .name(format!("stage-{}", spec.name))
        .spawn(move || {
            let mut received = 0u64;
            let mut error = None;
            let mut clean_end = false;
            'run: while let Ok(msg) = rx.recv() {
                match msg {
                    Msg::End => {
                        clean_end = out.push(Msg::End);
                        break;
                    }
                    Msg::Data(p, _) => {
                        received += 1;
                        match (spec.func)(p) {
                            Ok(outputs) => {
                                for o in outputs {
                                    if !out.push(Msg::Data(o, Instant::now())) {
                                        break 'run;
                                    }
                                }
                            }
                            Err(e) => {
                                error = Some(e);
                                break;
                            }
                        }
                    }
                }
            }
            let closed = error.is_none() && !clean_end;
            StageOutcome {
                counts: StageCounts {
                    name: spec.name.clone(),
                    received,
                    emitted: out.sent,
                },
                max_occupancy: out.max_occupancy,
                error,
                closed,
            }
        })
        .expect("spawn stage thread")
}

/// Runs `source` through the chain of `stages` until the source is
/// exhausted and every stage has drained.
pub fn run_pipeline<T, I>(stages: Vec<StageSpec<T>>, source: I, pacing: Pacing) -> Result<PipelineRun<T>>
where
    T: Send + 'static,
    I: IntoIterator<Item = Packet<T>>,
    I::IntoIter: Send + 'static,
{
    if stages.is_empty() {
        return Err(PipelineError::Config("pipeline needs at least one stage".into()));
    }
    if let Some(s) = stages.iter().find(|s| s.capacity == 0) {
        return Err(PipelineError::Config(format!("stage `{}` has a zero-capacity queue", s.name)));
    }
    if let Pacing::RealTime { sample_rate_hz } = pacing {
        if !(sample_rate_hz > 0.0) {
            return Err(PipelineError::Config("sample rate must be positive".into()));
        }
    }
    let declared = LoopBudget::new(
        stages
            .iter()
            .filter(|s| s.duration_ms > 0.0)
            .map(|s| (s.duration_ms, s.period_ms))
            .collect(),
    );
    if let Some(s) = stages.iter().find(|s| s.duration_ms > s.period_ms && s.duration_ms > 0.0) {
        log::warn!("stage `{}` takes longer than its period", s.name);
    }
    if let Ok(p) = processor_budget(&declared) {
        if p >= 100.0 {
            log::warn!("declared processor budget {p:.1}% is not schedulable");
        }
    }

    let stalls = Arc::new(AtomicU64::new(0));
    let names: Vec<String> = stages.iter().map(|s| s.name.clone()).collect();
    let mut links = Vec::with_capacity(stages.len() + 1);
    let mut receivers = Vec::with_capacity(stages.len() + 1);
    for cap in stages.iter().map(|s| s.capacity).chain([DEFAULT_CAPACITY]) {
        let (tx, rx) = bounded(cap);
        links.push(Link {
            tx,
            stalls: stalls.clone(),
            max_occupancy: 0,
            sent: 0,
        });
        receivers.push(rx);
    }
    let sink_rx = receivers.pop().expect("sink queue");
    let mut links = links.into_iter();
    let mut source_link = links.next().expect("source link");

    let t0 = Instant::now();
    let source = source.into_iter();
    let source_handle = thread::Builder::new()
        .name("source".into())
        .spawn(move || {
            let mut samples = 0usize;
            let mut releases = Vec::new();
            let mut last = t0;
            let mut complete = true;
            for p in source {
                if let Pacing::RealTime { sample_rate_hz } = pacing {
                    let due = t0 + Duration::from_secs_f64(p.span.1 as f64 / sample_rate_hz);
                    let now = Instant::now();
                    if due > now {
                        thread::sleep(due - now);
                    }
                }
                samples += p.span.1.saturating_sub(p.span.0);
                let span = p.span;
                last = Instant::now();
                releases.push((span.0, span.1, last));
                if !source_link.push(Msg::Data(p, last)) {
                    complete = false;
                    break;
                }
            }
            if complete {
                source_link.push(Msg::End);
            }
            (samples, releases, last, source_link.sent, source_link.max_occupancy)
        })
        .expect("spawn source thread");

    let mut handles = Vec::with_capacity(stages.len());
    for (spec, (rx, link)) in stages.into_iter().zip(receivers.into_iter().zip(links)) {
        handles.push(spawn_stage(spec, rx, link));
    }

    let mut results = Vec::new();
    let mut emitted_at = Vec::new();
    while let Ok(msg) = sink_rx.recv() {
        match msg {
            Msg::Data(p, at) => {
                results.push(p);
                emitted_at.push(at);
            }
            Msg::End => break,
        }
    }
    drop(sink_rx);

    let outcomes: Vec<StageOutcome> = handles
        .into_iter()
        .zip(&names)
        .map(|(h, name)| {
            h.join().unwrap_or_else(|_| StageOutcome {
                counts: StageCounts {
                    name: name.clone(),
                    received: 0,
                    emitted: 0,
                },
                max_occupancy: 0,
                error: Some("stage panicked".into()),
                closed: false,
            })
        })
        .collect();
    let (samples, releases, last_release, source_packets, source_occupancy) =
        source_handle.join().map_err(|_| PipelineError::Stage {
            stage: "source".into(),
            message: "source panicked".into(),
        })?;
    if let Some(o) = outcomes.iter().find(|o| o.error.is_some()) {
        return Err(PipelineError::Stage {
            stage: o.counts.name.clone(),
            message: o.error.clone().unwrap_or_default(),
        });
    }
    if let Some(o) = outcomes.iter().find(|o| o.closed) {
        return Err(PipelineError::Stage {
            stage: o.counts.name.clone(),
            message: "queue closed before end of stream".into(),
        });
    }

    let origin_of = |first: usize| -> Instant {
        match pacing {
            Pacing::RealTime { sample_rate_hz } => t0 + Duration::from_secs_f64(first as f64 / sample_rate_hz),
            Pacing::Unpaced => {
                let i = releases.partition_point(|r: &(usize, usize, Instant)| r.1 <= first);
                releases.get(i).map_or(t0, |r| r.2)
            }
        }
    };
    let latencies_ms: Vec<f64> = results
        .iter()
        .zip(&emitted_at)
        .map(|(p, at)| at.saturating_duration_since(origin_of(p.span.0)).as_secs_f64() * 1e3)
        .collect();
    let window_s = match pacing {
        Pacing::RealTime { sample_rate_hz } => releases.last().map_or(0.0, |r| r.1 as f64 / sample_rate_hz),
        Pacing::Unpaced => last_release.duration_since(t0).as_secs_f64(),
    };
    let mut max_occupancy = vec![source_occupancy];
    max_occupancy.extend(outcomes.iter().map(|o| o.max_occupancy));
    let stats = PipelineStats::new(
        samples,
        source_packets,
        window_s,
        latencies_ms,
        stalls.load(Ordering::Relaxed),
        max_occupancy,
        outcomes.into_iter().map(|o| o.counts).collect(),
    );
    Ok(PipelineRun { results, stats })
}

/// Splits `samples` into consecutive blocks of `block` samples (the last
/// block may be shorter), wrapping each block's values with `wrap`.
pub fn sample_blocks<T, F>(samples: Vec<f64>, block: usize, wrap: F) -> impl Iterator<Item = Packet<T>> + Send
where
    F: Fn(Vec<f64>) -> T + Send,
{
    let block = block.max(1);
    let n = samples.len();
    (0..n.div_ceil(block)).map(move |k| {
        let s = k * block;
        let e = (s + block).min(n);
        Packet {
            seq: k as u64,
            span: (s, e),
            payload: wrap(samples[s..e].to_vec()),
        }
    })
}
