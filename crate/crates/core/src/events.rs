//! Switching-event detection: exact penalized changepoint search on signal
//! power, wavelet high-band bursts, and steady/transient segmentation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Frame, SampleStream};
use crate::wavelet::{highband_extract, WaveletFilterPair};

/// Mean-square floor inside the segment cost.
pub const MEAN_SQUARE_FLOOR: f64 = 1e-20;
pub const TRANSIENT_HALF_WIDTH: usize = 512;

/// `len * ln(mean(x^2))`, with the mean square floored.
pub fn segment_cost(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let n = x.len() as f64;
    let ms = x.iter().map(|v| v * v).sum::<f64>() / n;
    n * ms.max(MEAN_SQUARE_FLOOR).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangepointConfig {
    /// Penalty per changepoint. `None` uses `2 ln n` for a frame of n samples.
    pub beta: Option<f64>,
    pub min_segment: usize,
    pub max_changepoints: Option<usize>,
}

impl Default for ChangepointConfig {
    fn default() -> Self {
        ChangepointConfig {
            beta: None,
            min_segment: 2,
            max_changepoints: None,
        }
    }
}

impl ChangepointConfig {
    pub fn with_beta(beta: f64) -> Self {
        ChangepointConfig {
            beta: Some(beta),
            ..Default::default()
        }
    }

    pub fn beta_for(&self, n: usize) -> f64 {
        self.beta.unwrap_or(2.0 * (n.max(2) as f64).ln())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangepointResult {
    /// Absolute sample indices where a new segment starts.
    pub changepoints: Vec<usize>,
    pub total_cost: f64,
}

impl ChangepointResult {
    pub fn k(&self) -> usize {
        self.changepoints.len()
    }
}

struct Prefix(Vec<f64>);

impl Prefix {
    fn new(x: &[f64]) -> Self {
        let mut p = Vec::with_capacity(x.len() + 1);
        p.push(0.0);
        let mut acc = 0.0;
        for v in x {
            acc += v * v;
            p.push(acc);
        }
        Prefix(p)
    }

    fn cost(&self, s: usize, t: usize) -> f64 {
        let n = (t - s) as f64;
        let ms = (self.0[t] - self.0[s]) / n;
        n * ms.max(MEAN_SQUARE_FLOOR).ln()
    }
}

fn tie(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Segmentation of `frame` minimizing the summed segment costs plus
/// `beta` per changepoint.
///
/// Exact dynamic programming over all segmentations whose segments hold at
/// least `min_segment` samples. Among equal costs the smaller K wins, then
/// the lexicographically earliest changepoints.
pub fn detect_changepoints(frame: &Frame, config: &ChangepointConfig) -> Result<ChangepointResult> {
    let m = config.min_segment;
    if m < 2 {
        return Err(Error::Parameter("min_segment must be at least 2".into()));
    }
    let x = frame.values();
    let n = x.len();
    if n < 2 * m {
        return Err(Error::Length {
            needed: 2 * m,
            available: n,
        });
    }
    let beta = config.beta_for(n);
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Parameter(format!("beta {beta} must be non-negative")));
    }
    let pre = Prefix::new(x);
    let (local, cost) = match config.max_changepoints {
        Some(kmax) => bounded_search(&pre, n, m, kmax, beta),
        None => penalized_search(&pre, n, m, beta),
    };
    Ok(ChangepointResult {
        changepoints: local.into_iter().map(|c| c + frame.start_index()).collect(),
        total_cost: cost,
    })
}

/// Unbounded K: suffix optimal partitioning.
fn penalized_search(pre: &Prefix, n: usize, m: usize, beta: f64) -> (Vec<usize>, f64) {
    // g[s]: best (cost, changepoints) for segmenting [s, n), where each new
    // segment after the first pays beta.
    let mut g = vec![(f64::INFINITY, usize::MAX); n + 1];
    g[n] = (0.0, 0);
    for s in (0..n).rev() {
        if n - s < m {
            continue;
        }
        // Last segment [s, n).
        let mut best = (pre.cost(s, n), 0usize);
        for t in s + m..=n.saturating_sub(m) {
            if !g[t].0.is_finite() {
                continue;
            }
            let c = pre.cost(s, t) + beta + g[t].0;
            let k = g[t].1 + 1;
            if better(c, k, best) {
                best = (c, k);
            }
        }
        g[s] = best;
    }
    let mut cps = Vec::new();
    let mut s = 0;
    let mut k_left = g[0].1;
    while k_left > 0 {
        let target = g[s];
        let next = (s + m..=n - m)
            .find(|&t| {
                g[t].0.is_finite()
                    && g[t].1 + 1 == target.1
                    && tie(pre.cost(s, t) + beta + g[t].0, target.0)
            })
            .expect("backtrack follows the forward optimum");
        cps.push(next);
        s = next;
        k_left -= 1;
    }
    (cps, g[0].0)
}

fn better(c: f64, k: usize, best: (f64, usize)) -> bool {
    if tie(c, best.0) {
        k < best.1
    } else {
        c < best.0
    }
}

/// K limited to `kmax`: one suffix table per segment count.
fn bounded_search(pre: &Prefix, n: usize, m: usize, kmax: usize, beta: f64) -> (Vec<usize>, f64) {
    let kmax = kmax.min(n / m - 1);
    // h[k][s]: best raw cost of [s, n) in exactly k+1 segments.
    let mut h = vec![vec![f64::INFINITY; n + 1]; kmax + 1];
    for s in 0..=n - m {
        h[0][s] = pre.cost(s, n);
    }
    for k in 1..=kmax {
        for s in 0..=n - m {
            let mut best = f64::INFINITY;
            for t in s + m..=n - m {
                let tail = h[k - 1][t];
                if tail.is_finite() {
                    let c = pre.cost(s, t) + tail;
                    if c < best {
                        best = c;
                    }
                }
            }
            h[k][s] = best;
        }
    }
    let mut k_best = 0;
    let mut total = h[0][0];
    for (k, row) in h.iter().enumerate().skip(1) {
        let c = row[0] + beta * k as f64;
        if c.is_finite() && c < total && !tie(c, total) {
            total = c;
            k_best = k;
        }
    }
    let mut cps = Vec::new();
    let mut s = 0;
    for k in (1..=k_best).rev() {
        let target = h[k][s];
        let next = (s + m..=n - m)
            .find(|&t| h[k - 1][t].is_finite() && tie(pre.cost(s, t) + h[k - 1][t], target))
            .expect("backtrack follows the forward optimum");
        cps.push(next);
        s = next;
    }
    (cps, total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveletDetectConfig {
    pub threshold_mult: f64,
    /// Moving-average length over the squared high band, in input samples.
    pub smooth_window: usize,
    /// Detections closer than this merge into one event.
    pub refractory: usize,
    /// Trailing window for the rolling median, in input samples.
    pub median_window: usize,
    /// Energy below this fraction of the stream's mean power never triggers.
    pub floor_fraction: f64,
    pub min_duration_s: f64,
}

impl Default for WaveletDetectConfig {
    fn default() -> Self {
        WaveletDetectConfig {
            threshold_mult: 10.0,
            smooth_window: 64,
            refractory: 2000,
            median_window: 10_000,
            floor_fraction: 1e-7,
            min_duration_s: 1.0,
        }
    }
}

/// A detected burst: the merged run of above-threshold samples and the
/// index of its peak smoothed energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Burst {
    pub start: usize,
    pub end: usize,
    pub peak: usize,
}

/// Smoothed high-band energy per input sample.
///
/// Each db9 detail coefficient is placed at the centre of its filter support
/// and held for two samples. Coefficients whose support wraps around the
/// end of the stream are zeroed.
pub fn highband_energy(stream: &SampleStream, smooth_window: usize) -> Result<Vec<f64>> {
    let n = stream.len();
    let d = highband_extract(stream)?;
    let taps = WaveletFilterPair::db9().len();
    let mut e = vec![0.0; n];
    for (k, v) in d.samples().iter().enumerate() {
        if 2 * k + taps > n {
            break;
        }
        let c = 2 * k + taps / 2 - 1;
        for slot in e.iter_mut().skip(c).take(2) {
            *slot = v * v;
        }
    }
    Ok(centered_average(&e, smooth_window.max(1)))
}

fn centered_average(x: &[f64], w: usize) -> Vec<f64> {
    let n = x.len();
    let mut pre = vec![0.0; n + 1];
    for (i, v) in x.iter().enumerate() {
        pre[i + 1] = pre[i] + v;
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(w / 2);
            let hi = (lo + w).min(n);
            (pre[hi] - pre[lo]) / (hi - lo) as f64
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}

/// Trailing median of `x`, refreshed every 256 samples. Before a full
/// window of history exists, the first `min(window, len)` samples are used.
fn rolling_median(x: &[f64], window: usize) -> Vec<f64> {
    let n = x.len();
    let hop = 256;
    let warm = window.min(n);
    let start_median = median(x[..warm].to_vec());
    let mut out = vec![start_median; n];
    let mut i = warm;
    while i < n {
        let m = median(x[i - window.min(i)..i].to_vec());
        for slot in out.iter_mut().skip(i).take(hop) {
            *slot = m;
        }
        i += hop;
    }
    out
}

/// Bursts of high-band energy above `threshold_mult` times the rolling
/// median.
pub fn wavelet_bursts(stream: &SampleStream, config: &WaveletDetectConfig) -> Result<Vec<Burst>> {
    let min_len = (config.min_duration_s * stream.sample_rate_hz()).round() as usize;
    if stream.len() < min_len.max(64) {
        return Err(Error::Length {
            needed: min_len.max(64),
            available: stream.len(),
        });
    }
    let e = highband_energy(stream, config.smooth_window)?;
    let med = rolling_median(&e, config.median_window);
    let power = stream.samples().iter().map(|v| v * v).sum::<f64>() / stream.len() as f64;
    let floor = config.floor_fraction * power;
    let mut bursts: Vec<Burst> = Vec::new();
    for (i, (&v, &m)) in e.iter().zip(&med).enumerate() {
        if v <= config.threshold_mult * m || v <= floor {
            continue;
        }
        match bursts.last_mut() {
            Some(b) if i <= b.end + config.refractory => {
                b.end = i + 1;
                if v > e[b.peak] {
                    b.peak = i;
                }
            }
            _ => bursts.push(Burst {
                start: i,
                end: i + 1,
                peak: i,
            }),
        }
    }
    Ok(bursts)
}

/// Event indices from [`wavelet_bursts`] at the default settings with the
/// given threshold multiplier.
pub fn wavelet_event_detect(stream: &SampleStream, threshold_mult: f64) -> Result<Vec<usize>> {
    let config = WaveletDetectConfig {
        threshold_mult,
        ..Default::default()
    };
    Ok(wavelet_bursts(stream, &config)?.into_iter().map(|b| b.peak).collect())
}

/// Samples `[event_index - 512, event_index + 512)`.
pub fn extract_transient(stream: &SampleStream, event_index: usize) -> Result<Frame> {
    let h = TRANSIENT_HALF_WIDTH;
    if event_index < h || event_index + h > stream.len() {
        return Err(Error::Boundary {
            index: event_index,
            margin: h,
            len: stream.len(),
        });
    }
    stream.frame(event_index - h, 2 * h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EventDetectConfig {
    pub f0_hz: f64,
    pub wavelet: WaveletDetectConfig,
    /// Penalty on the half-cycle power series; `None` uses `2 ln n`.
    pub beta: Option<f64>,
    /// Padding around transient spans, in power cycles.
    pub guard_cycles: f64,
}

impl Default for EventDetectConfig {
    fn default() -> Self {
        EventDetectConfig {
            f0_hz: 50.0,
            wavelet: WaveletDetectConfig::default(),
            beta: None,
            guard_cycles: 2.0,
        }
    }
}

/// Changepoints of the half-cycle mean-square series, each refined to a
/// sample index by a single-split search on the raw samples around it.
pub fn power_changepoints(stream: &SampleStream, config: &EventDetectConfig) -> Result<Vec<usize>> {
    let fs = stream.sample_rate_hz();
    let half = ((fs / config.f0_hz) / 2.0).round().max(2.0) as usize;
    let x = stream.samples();
    let blocks = x.len() / half;
    if blocks < 4 {
        return Err(Error::Length {
            needed: 4 * half,
            available: x.len(),
        });
    }
    // Each block's RMS, so the segment cost sees one value per half cycle.
    let rms: Vec<f64> = (0..blocks)
        .map(|b| {
            let s = &x[b * half..(b + 1) * half];
            (s.iter().map(|v| v * v).sum::<f64>() / half as f64).sqrt()
        })
        .collect();
    let frame = Frame::new(rms, 0, fs / half as f64)?;
    let cp = detect_changepoints(
        &frame,
        &ChangepointConfig {
            beta: config.beta,
            min_segment: 2,
            max_changepoints: None,
        },
    )?;
    let mut out = Vec::new();
    for c in cp.changepoints {
        let lo = (c.saturating_sub(2)) * half;
        let hi = ((c + 2) * half).min(x.len());
        let local = Frame::new(x[lo..hi].to_vec(), lo, fs)?;
        let refined = detect_changepoints(
            &local,
            &ChangepointConfig {
                beta: Some(0.0),
                min_segment: 2,
                max_changepoints: Some(1),
            },
        )?;
        out.push(refined.changepoints.first().copied().unwrap_or(c * half));
    }
    Ok(out)
}

/// Union of wavelet bursts and power changepoints. A changepoint within
/// the refractory gap of a burst is dropped in favour of the burst peak.
pub fn detect_events(stream: &SampleStream, config: &EventDetectConfig) -> Result<Vec<Burst>> {
    let mut bursts = wavelet_bursts(stream, &config.wavelet)?;
    let gap = config.wavelet.refractory;
    for c in power_changepoints(stream, config)? {
        let near = bursts
            .iter()
            .any(|b| c + gap >= b.start && c <= b.end + gap);
        if !near {
            bursts.push(Burst {
                start: c,
                end: c + 1,
                peak: c,
            });
        }
    }
    bursts.sort_by_key(|b| b.start);
    Ok(bursts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateLabel {
    Steady,
    Transient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSegmentation {
    /// `(start, end, label)` with `end` exclusive, tiling the stream.
    pub segments: Vec<(usize, usize, StateLabel)>,
}

impl StateSegmentation {
    pub fn transients(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.segments
            .iter()
            .filter(|s| s.2 == StateLabel::Transient)
            .map(|s| (s.0, s.1))
    }
}

/// Transient spans are the detected bursts padded by the guard margin and
/// merged where they touch; steady segments fill the rest.
pub fn segment_states(stream: &SampleStream, config: &EventDetectConfig) -> Result<StateSegmentation> {
    let n = stream.len();
    let cycle = (stream.sample_rate_hz() / config.f0_hz).round() as usize;
    if n < 2 * cycle {
        return Err(Error::Length {
            needed: 2 * cycle,
            available: n,
        });
    }
    let guard = (config.guard_cycles * cycle as f64).round() as usize;
    let mut spans: Vec<(usize, usize)> = Vec::new();
    for b in detect_events(stream, config)? {
        let s = b.start.saturating_sub(guard);
        let e = (b.end + guard).min(n);
        match spans.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => spans.push((s, e)),
        }
    }
    let mut segments = Vec::new();
    let mut at = 0;
    for (s, e) in spans {
        if s > at {
            segments.push((at, s, StateLabel::Steady));
        }
        segments.push((s, e, StateLabel::Transient));
        at = e;
    }
    if at < n {
        segments.push((at, n, StateLabel::Steady));
    }
    Ok(StateSegmentation { segments })
}
