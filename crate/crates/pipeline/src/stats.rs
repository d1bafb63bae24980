use serde::{Deserialize, Serialize};

use crate::{PipelineError, Result};

/// Latency budget of one HIF verdict: the 89.6 ms data span of a feature
/// map plus one 25.6 ms frame of slack.
pub const HIF_LATENCY_BUDGET_MS: f64 = 115.2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub name: String,
    pub received: u64,
    pub emitted: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub source_samples: usize,
    pub source_packets: u64,
    /// Span of the source schedule the throughputs are measured over.
    pub window_s: f64,
    pub incoming_throughput_samples_per_s: f64,
    pub outgoing_throughput_results_per_s: f64,
    pub latencies_ms: Vec<f64>,
    pub jitter_ms: f64,
    /// Pushes that found their queue full and had to wait.
    pub queue_overflows: u64,
    /// Highest occupancy seen per queue, source queue first.
    pub max_queue_occupancy: Vec<usize>,
    pub stages: Vec<StageCounts>,
}

impl PipelineStats {
    pub fn new(
        source_samples: usize,
        source_packets: u64,
        window_s: f64,
        latencies_ms: Vec<f64>,
        queue_overflows: u64,
        max_queue_occupancy: Vec<usize>,
        stages: Vec<StageCounts>,
    ) -> Self {
        let rate = |n: f64| if window_s > 0.0 { n / window_s } else { 0.0 };
        PipelineStats {
            source_samples,
            source_packets,
            window_s,
            incoming_throughput_samples_per_s: rate(source_samples as f64),
            outgoing_throughput_results_per_s: rate(latencies_ms.len() as f64),
            jitter_ms: std_dev(&latencies_ms),
            latencies_ms,
            queue_overflows,
            max_queue_occupancy,
            stages,
        }
    }

    pub fn results(&self) -> usize {
        self.latencies_ms.len()
    }

    /// True when every queue delivered exactly what was pushed into it.
    pub fn lossless(&self) -> bool {
        let mut upstream = self.source_packets;
        for s in &self.stages {
            if s.received != upstream {
                return false;
            }
            upstream = s.emitted;
        }
        upstream as usize == self.results()
    }
}

fn std_dev(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub results: usize,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
    pub mean_ms: f64,
    /// Population standard deviation of the latencies.
    pub jitter_ms: f64,
}

impl LatencyReport {
    pub fn within(&self, budget_ms: f64) -> bool {
        self.max_ms <= budget_ms
    }
}

/// Nearest-rank percentile of sorted values, `q` in `(0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn latency_report(stats: &PipelineStats) -> Result<LatencyReport> {
    let mut v = stats.latencies_ms.clone();
    if v.is_empty() {
        return Err(PipelineError::Empty);
    }
    v.sort_by(f64::total_cmp);
    Ok(LatencyReport {
        results: v.len(),
        p50_ms: percentile(&v, 0.5),
        p99_ms: percentile(&v, 0.99),
        max_ms: *v.last().expect("nonempty"),
        mean_ms: v.iter().sum::<f64>() / v.len() as f64,
        jitter_ms: std_dev(&v),
    })
}
