//! The canonical HIF detection chain: framing, band-energy features with
//! map assembly, and CNN classification.

use std::collections::BTreeMap;

use gridwatch_core::hif_features::{
    BandEnergies, FeatureMap, HifFeatureExtractor, HIF_FRAMES_PER_MAP, HIF_FRAME_LEN, HIF_HOP, HIF_MAP_SPAN,
};
use gridwatch_core::signal::Frame;
use gridwatch_core::simgen::corpus::{hif_window, normal_window, transient_window, CORPUS_RATE_HZ, LOAD_RATIOS};
use gridwatch_core::simgen::{subseed, Surface};
use gridwatch_nn::detectors::{HifClassifier, HifVerdict};
use serde::{Deserialize, Serialize};

use crate::budget::{processor_budget, LoopBudget};
use crate::engine::{run_pipeline, sample_blocks, Pacing, Packet, StageSpec, StageTag};
use crate::stats::{latency_report, LatencyReport, PipelineStats, HIF_LATENCY_BUDGET_MS};
use crate::{PipelineError, Result};

/// Samples per acquisition block (12.8 ms at 20 kHz).
pub const BLOCK_LEN: usize = 256;
/// Samples between the starts of consecutive feature maps (76.8 ms).
pub const MAP_HOP: usize = HIF_FRAMES_PER_MAP * HIF_HOP;

#[derive(Debug, Clone, PartialEq)]
pub enum HifPayload {
    Samples(Vec<f64>),
    Frame(Vec<f64>),
    Column(BandEnergies),
    Map(FeatureMap),
    Verdict(HifVerdict),
}

fn unexpected(stage: &str, p: &HifPayload) -> String {
    let kind = match p {
        HifPayload::Samples(_) => "samples",
        HifPayload::Frame(_) => "frame",
        HifPayload::Column(_) => "column",
        HifPayload::Map(_) => "map",
        HifPayload::Verdict(_) => "verdict",
    };
    format!("{stage} stage cannot take a {kind} packet")
}

/// Cuts contiguous sample blocks into 512-sample frames every 256 samples.
fn framing_stage() -> StageSpec<HifPayload> {
    let mut buf: Vec<f64> = Vec::new();
    let mut buf_start = 0usize;
    let mut expected = 0usize;
    let mut next_frame = 0usize;
    let mut seq = 0u64;
    StageSpec::new(
        "acquisition",
        StageTag::Acquisition,
        Box::new(move |p: Packet<HifPayload>| {
            let HifPayload::Samples(block) = p.payload else {
                return Err(unexpected("acquisition", &p.payload));
            };
            if p.span.0 != expected {
                return Err(format!("sample gap: expected block at {expected}, got {}", p.span.0));
            }
            expected = p.span.1;
            buf.extend_from_slice(&block);
            let mut out = Vec::new();
            while next_frame + HIF_FRAME_LEN <= buf_start + buf.len() {
                let off = next_frame - buf_start;
                out.push(Packet {
                    seq,
                    span: (next_frame, next_frame + HIF_FRAME_LEN),
                    payload: HifPayload::Frame(buf[off..off + HIF_FRAME_LEN].to_vec()),
                });
                seq += 1;
                next_frame += HIF_HOP;
            }
            let drop = next_frame - buf_start;
            buf.drain(..drop.min(buf.len()));
            buf_start += drop;
            Ok(out)
        }),
    )
    .with_budget(3.5, 12.8)
}

/// Band energies per frame; every sixth column closes a feature map.
fn feature_stage(extractor: HifFeatureExtractor, sample_rate_hz: f64) -> StageSpec<HifPayload> {
    let mut columns: Vec<BandEnergies> = Vec::with_capacity(HIF_FRAMES_PER_MAP);
    let mut map_start = 0usize;
    let mut seq = 0u64;
    StageSpec::new(
        "feature",
        StageTag::Feature,
        Box::new(move |p: Packet<HifPayload>| {
            let HifPayload::Frame(values) = p.payload else {
                return Err(unexpected("feature", &p.payload));
            };
            if columns.is_empty() {
                if p.span.0 % MAP_HOP != 0 {
                    return Err(format!("frame at {} is not aligned to a map start", p.span.0));
                }
                map_start = p.span.0;
            }
            let frame = Frame::new(values, p.span.0, sample_rate_hz).map_err(|e| e.to_string())?;
            columns.push(extractor.vector(&frame).map_err(|e| e.to_string())?);
            if columns.len() < HIF_FRAMES_PER_MAP {
                return Ok(vec![]);
            }
            let map = extractor.map_from_vectors(&columns, map_start).map_err(|e| e.to_string())?;
            columns.clear();
            let out = Packet {
                seq,
                span: (map_start, map_start + HIF_MAP_SPAN),
                payload: HifPayload::Map(map),
            };
            seq += 1;
            Ok(vec![out])
        }),
    )
    .with_budget(20.9, 76.8)
}

fn classify_stage(classifier: HifClassifier) -> StageSpec<HifPayload> {
    StageSpec::new(
        "classify",
        StageTag::Classify,
        Box::new(move |p: Packet<HifPayload>| {
            let HifPayload::Map(map) = &p.payload else {
                return Err(unexpected("classify", &p.payload));
            };
            let v = classifier.classify(map).map_err(|e| e.to_string())?;
            Ok(vec![Packet {
                seq: p.seq,
                span: p.span,
                payload: HifPayload::Verdict(v),
            }])
        }),
    )
    .with_budget(1.0, 76.8)
}

/// The three-stage chain, each link holding `capacity` packets.
pub fn hif_chain(classifier: HifClassifier, sample_rate_hz: f64, capacity: usize) -> Result<Vec<StageSpec<HifPayload>>> {
    let extractor = HifFeatureExtractor::new(sample_rate_hz)?;
    Ok(vec![
        framing_stage().with_capacity(capacity),
        feature_stage(extractor, sample_rate_hz).with_capacity(capacity),
        classify_stage(classifier).with_capacity(capacity),
    ])
}

/// Source packets of `BLOCK_LEN` samples.
pub fn hif_source(samples: Vec<f64>) -> impl Iterator<Item = Packet<HifPayload>> + Send {
    sample_blocks(samples, BLOCK_LEN, HifPayload::Samples)
}

/// Synthetic 20 kHz current cycling through one-second segments of normal
/// load, fault current and switching transients.
pub fn bench_stream(seconds: f64, seed: u64) -> Result<Vec<f64>> {
    let seg = CORPUS_RATE_HZ as usize;
    let total = (seconds * CORPUS_RATE_HZ).round() as usize;
    let mut out = Vec::with_capacity(total);
    let mut k = 0usize;
    while out.len() < total {
        let s = subseed(seed, k as u64);
        let item = match k % 3 {
            0 => normal_window(seg, s),
            1 => hif_window(
                seg,
                Surface::ALL[(k / 3) % 3],
                LOAD_RATIOS[(k / 9) % LOAD_RATIOS.len()],
                s,
            )?,
            _ => transient_window(seg, s)?,
        };
        out.extend_from_slice(&item.samples[..seg.min(total - out.len())]);
        k += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub seconds: f64,
    pub queue_capacity: usize,
    pub seed: u64,
    /// Run without real-time pacing; latencies are then measured from
    /// block release instead of nominal acquisition time.
    pub unpaced: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            seconds: 30.0,
            queue_capacity: crate::engine::DEFAULT_CAPACITY,
            seed: 0,
            unpaced: false,
        }
    }
}

pub const TARGET_RESULTS_PER_S: f64 = 13.0;
pub const RESULTS_PER_S_TOLERANCE: f64 = 0.2;
/// Duration of the samples behind one feature map.
pub const MAP_SPAN_MS: f64 = HIF_MAP_SPAN as f64 * 1e3 / CORPUS_RATE_HZ;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seconds_streamed: f64,
    pub incoming_samples_per_s: f64,
    pub results: usize,
    pub results_per_s: f64,
    pub queue_overflows: u64,
    pub max_queue_occupancy: Vec<usize>,
    pub lossless: bool,
    pub latency: LatencyReport,
    pub min_latency_ms: f64,
    pub latency_budget_ms: f64,
    pub processor_budget_pct: f64,
    pub verdict_counts: BTreeMap<String, usize>,
    pub passed: bool,
    pub failures: Vec<String>,
}

/// Streams `cfg.seconds` of synthetic current through the canonical chain
/// and checks the throughput, overflow and latency contract.
pub fn run_hif_benchmark(classifier: &HifClassifier, cfg: &BenchConfig) -> Result<(BenchReport, Vec<HifVerdict>)> {
    if !(cfg.seconds > 0.0) {
        return Err(PipelineError::Config("benchmark needs a positive duration".into()));
    }
    let samples = bench_stream(cfg.seconds, cfg.seed)?;
    let stages = hif_chain(classifier.clone(), CORPUS_RATE_HZ, cfg.queue_capacity)?;
    let budget = processor_budget(&LoopBudget::new(
        stages.iter().map(|s| (s.duration_ms, s.period_ms)).collect(),
    ))?;
    let pacing = if cfg.unpaced {
        Pacing::Unpaced
    } else {
        Pacing::RealTime {
            sample_rate_hz: CORPUS_RATE_HZ,
        }
    };
    let run = run_pipeline(stages, hif_source(samples), pacing)?;
    let verdicts: Vec<HifVerdict> = run
        .results
        .into_iter()
        .map(|p| match p.payload {
            HifPayload::Verdict(v) => Ok(v),
            other => Err(PipelineError::Stage {
                stage: "classify".into(),
                message: unexpected("sink", &other),
            }),
        })
        .collect::<Result<_>>()?;
    Ok((summarize(&run.stats, budget, &verdicts, !cfg.unpaced)?, verdicts))
}

fn summarize(stats: &PipelineStats, budget_pct: f64, verdicts: &[HifVerdict], paced: bool) -> Result<BenchReport> {
    let latency = latency_report(stats)?;
    let min_latency_ms = stats.latencies_ms.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut verdict_counts = BTreeMap::new();
    for v in verdicts {
        *verdict_counts.entry(v.label.clone()).or_insert(0) += 1;
    }
    let rate = stats.outgoing_throughput_results_per_s;
    let mut failures = Vec::new();
    if stats.queue_overflows > 0 {
        failures.push(format!("{} queue overflows", stats.queue_overflows));
    }
    if !stats.lossless() {
        failures.push("packet counts differ across a queue".into());
    }
    if paced {
        if !latency.within(HIF_LATENCY_BUDGET_MS) {
            failures.push(format!("worst latency {:.2} ms over {HIF_LATENCY_BUDGET_MS} ms", latency.max_ms));
        }
        if min_latency_ms < MAP_SPAN_MS - 1e-6 {
            failures.push(format!("latency {min_latency_ms:.2} ms below the {MAP_SPAN_MS} ms data span"));
        }
        if (rate - TARGET_RESULTS_PER_S).abs() > RESULTS_PER_S_TOLERANCE {
            failures.push(format!("{rate:.3} results/s outside {TARGET_RESULTS_PER_S} +- {RESULTS_PER_S_TOLERANCE}"));
        }
    }
    Ok(BenchReport {
        seconds_streamed: stats.window_s,
        incoming_samples_per_s: stats.incoming_throughput_samples_per_s,
        results: stats.results(),
        results_per_s: rate,
        queue_overflows: stats.queue_overflows,
        max_queue_occupancy: stats.max_queue_occupancy.clone(),
        lossless: stats.lossless(),
        latency,
        min_latency_ms,
        latency_budget_ms: HIF_LATENCY_BUDGET_MS,
        processor_budget_pct: budget_pct,
        verdict_counts,
        passed: failures.is_empty(),
        failures,
    })
}
