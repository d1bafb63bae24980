//! Orthogonal wavelet filter banks: DWT, full wavelet-packet trees and the
//! normalized wavelet-packet entropy feature.
//!
//! All transforms use periodic extension, so each level halves the
//! coefficient count exactly and reconstruction is exact up to round-off.
//!
//! Analysis convention: `out[k] = sum_n f[n] * x[(2k + n) mod N]`.
//! Synthesis is the transpose of that map.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::signal::{Frame, SampleStream};

/// Daubechies order-9 scaling filter (18 taps), as tabulated by PyWavelets
/// (`pywt.Wavelet("db9").rec_lo`), which follows Daubechies, *Ten Lectures
/// on Wavelets*, table 6.1.
pub const DB9_LOWPASS: [f64; 18] = [
    3.807_794_736_387_834_5e-2,
    2.438_346_746_125_903_4e-1,
    6.048_231_236_901_111_5e-1,
    6.572_880_780_513_005_2e-1,
    1.331_973_858_250_075_6e-1,
    -2.932_737_832_791_749_2e-1,
    -9.684_078_322_297_645_6e-2,
    1.485_407_493_381_063_8e-1,
    3.072_568_147_933_338e-2,
    -6.763_282_906_132_997_4e-2,
    2.509_471_148_314_519_7e-4,
    2.236_166_212_367_909_6e-2,
    -4.723_204_757_751_397e-3,
    -4.281_503_682_463_430_3e-3,
    1.847_646_883_056_226_5e-3,
    2.303_857_635_231_959_7e-4,
    -2.519_631_889_427_101_2e-4,
    3.934_732_031_627_160_3e-5,
];

/// Lowpass/highpass analysis pair related by the quadrature-mirror rule
/// `H[k] = (-1)^k L[len - 1 - k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletFilterPair {
    name: String,
    lowpass: Vec<f64>,
    highpass: Vec<f64>,
}

impl WaveletFilterPair {
    /// Builds the pair from a lowpass filter whose taps sum to `sqrt(2)`.
    pub fn from_lowpass(name: impl Into<String>, lowpass: Vec<f64>) -> Result<Self> {
        if lowpass.len() < 2 || lowpass.len() % 2 != 0 {
            return Err(Error::InvalidSize(format!(
                "wavelet filter needs an even tap count >= 2, got {}",
                lowpass.len()
            )));
        }
        let sum: f64 = lowpass.iter().sum();
        if (sum - std::f64::consts::SQRT_2).abs() > 1e-8 {
            return Err(Error::Parameter(format!(
                "lowpass taps sum to {sum}, expected sqrt(2)"
            )));
        }
        let len = lowpass.len();
        let highpass = (0..len)
            .map(|k| {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                sign * lowpass[len - 1 - k]
            })
            .collect();
        Ok(Self {
            name: name.into(),
            lowpass,
            highpass,
        })
    }

    pub fn haar() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self::from_lowpass("haar", vec![h, h]).expect("haar taps are valid")
    }

    pub fn db9() -> Self {
        Self::from_lowpass("db9", DB9_LOWPASS.to_vec()).expect("db9 taps are valid")
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "haar" | "db1" => Ok(Self::haar()),
            "db9" => Ok(Self::db9()),
            other => Err(Error::Parameter(format!("unknown wavelet `{other}`"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn lowpass(&self) -> &[f64] {
        &self.lowpass
    }

    pub fn highpass(&self) -> &[f64] {
        &self.highpass
    }

    pub fn len(&self) -> usize {
        self.lowpass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lowpass.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryMode {
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeKind {
    /// Approximation chain plus one detail per level. Node `(j, 0)` holds
    /// `a_j`, node `(j, 1)` holds `d_j`.
    Dwt,
    /// Full packet tree: level `j` holds `2^j` nodes; the children of
    /// `(j-1, m)` are `(j, 2m)` (lowpass) and `(j, 2m+1)` (highpass).
    Wpt,
}

/// Coefficients of a DWT or WPT decomposition, keyed by `(level, node)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletTree {
    kind: TreeKind,
    filters: WaveletFilterPair,
    boundary: BoundaryMode,
    max_level: usize,
    input_len: usize,
    start_index: usize,
    sample_rate_hz: f64,
    nodes: BTreeMap<(usize, usize), Vec<f64>>,
}

impl WaveletTree {
    pub fn kind(&self) -> TreeKind {
        self.kind
    }

    pub fn filters(&self) -> &WaveletFilterPair {
        &self.filters
    }

    pub fn boundary(&self) -> BoundaryMode {
        self.boundary
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn node(&self, level: usize, index: usize) -> Option<&[f64]> {
        self.nodes.get(&(level, index)).map(Vec::as_slice)
    }

    pub fn node_mut(&mut self, level: usize, index: usize) -> Option<&mut Vec<f64>> {
        self.nodes.get_mut(&(level, index))
    }

    /// Nodes of one level in index order.
    pub fn level(&self, level: usize) -> Vec<&[f64]> {
        self.nodes
            .range((level, 0)..(level + 1, 0))
            .map(|(_, v)| v.as_slice())
            .collect()
    }

    /// Leaves of a packet tree (all nodes of the deepest level).
    pub fn leaves(&self) -> Vec<&[f64]> {
        self.level(self.max_level)
    }

    /// Frequency-ordered band of a packet node stored at natural index `m`.
    ///
    /// Highpass branches mirror the spectrum after downsampling, so the
    /// natural (filter-path) index of band `b` is the Gray code of `b`;
    /// this is its inverse.
    pub fn band_of(index: usize) -> usize {
        let mut band = index;
        let mut shift = index >> 1;
        while shift != 0 {
            band ^= shift;
            shift >>= 1;
        }
        band
    }

    /// Natural node index carrying frequency band `band` at any level.
    pub fn node_for_band(band: usize) -> usize {
        band ^ (band >> 1)
    }

    /// Frequency edges `[lo, hi)` in Hz of band `band` at level `level`.
    pub fn band_edges_hz(&self, level: usize, band: usize) -> (f64, f64) {
        let width = self.sample_rate_hz / 2.0 / (1usize << level) as f64;
        (band as f64 * width, (band + 1) as f64 * width)
    }
}

fn analysis_step(x: &[f64], filter: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n / 2)
        .map(|k| {
            filter
                .iter()
                .enumerate()
                .map(|(t, f)| f * x[(2 * k + t) % n])
                .sum()
        })
        .collect()
}

fn synthesis_step(approx: &[f64], detail: &[f64], filters: &WaveletFilterPair) -> Vec<f64> {
    let n = approx.len() * 2;
    let mut out = vec![0.0; n];
    for k in 0..approx.len() {
        for (t, (l, h)) in filters.lowpass.iter().zip(&filters.highpass).enumerate() {
            out[(2 * k + t) % n] += approx[k] * l + detail[k] * h;
        }
    }
    out
}

/// Deepest level such that the input halves evenly and the deepest
/// approximation still has at least one filter length of samples.
pub fn max_feasible_level(len: usize, filter_len: usize) -> usize {
    let mut level = 0;
    let mut n = len;
    while n % 2 == 0 && n / 2 >= filter_len {
        n /= 2;
        level += 1;
    }
    level
}

fn check_depth(len: usize, filters: &WaveletFilterPair, levels: usize) -> Result<()> {
    let max_level = max_feasible_level(len, filters.len());
    if levels == 0 || levels > max_level {
        return Err(Error::Depth {
            requested: levels,
            max_level,
        });
    }
    Ok(())
}

/// Multi-level DWT along the approximation path.
pub fn dwt_decompose(
    frame: &Frame,
    filters: &WaveletFilterPair,
    levels: usize,
) -> Result<WaveletTree> {
    check_depth(frame.len(), filters, levels)?;
    let mut nodes = BTreeMap::new();
    let mut approx = frame.values().to_vec();
    for j in 1..=levels {
        let a = analysis_step(&approx, &filters.lowpass);
        let d = analysis_step(&approx, &filters.highpass);
        nodes.insert((j, 0), a.clone());
        nodes.insert((j, 1), d);
        approx = a;
    }
    Ok(WaveletTree {
        kind: TreeKind::Dwt,
        filters: filters.clone(),
        boundary: BoundaryMode::Periodic,
        max_level: levels,
        input_len: frame.len(),
        start_index: frame.start_index(),
        sample_rate_hz: frame.sample_rate_hz(),
        nodes,
    })
}

fn check_node(tree: &WaveletTree, level: usize, index: usize) -> Result<&[f64]> {
    let expected = tree.input_len >> level;
    let node = tree
        .node(level, index)
        .ok_or_else(|| Error::Structure(format!("missing node ({level}, {index})")))?;
    if node.len() != expected {
        return Err(Error::Structure(format!(
            "node ({level}, {index}) has {} coefficients, expected {expected}",
            node.len()
        )));
    }
    Ok(node)
}

/// Inverse of [`dwt_decompose`]: `x = a_k + d_k + ... + d_1` via the
/// upsample-filter-sum synthesis bank.
pub fn dwt_reconstruct(tree: &WaveletTree) -> Result<Frame> {
    if tree.kind != TreeKind::Dwt {
        return Err(Error::Structure("expected a DWT tree".into()));
    }
    if tree.max_level == 0 || tree.input_len % (1 << tree.max_level) != 0 {
        return Err(Error::Structure(format!(
            "input length {} incompatible with {} levels",
            tree.input_len, tree.max_level
        )));
    }
    let mut approx = check_node(tree, tree.max_level, 0)?.to_vec();
    for j in (1..=tree.max_level).rev() {
        let detail = check_node(tree, j, 1)?;
        approx = synthesis_step(&approx, detail, &tree.filters);
    }
    Frame::new(approx, tree.start_index, tree.sample_rate_hz)
}

/// Full wavelet-packet decomposition: every node splits into lowpass and
/// highpass children down to `levels`.
pub fn wpt_decompose(
    frame: &Frame,
    filters: &WaveletFilterPair,
    levels: usize,
) -> Result<WaveletTree> {
    check_depth(frame.len(), filters, levels)?;
    let mut nodes = BTreeMap::new();
    let mut current = vec![frame.values().to_vec()];
    for j in 1..=levels {
        let mut next = Vec::with_capacity(current.len() * 2);
        for parent in &current {
            next.push(analysis_step(parent, &filters.lowpass));
            next.push(analysis_step(parent, &filters.highpass));
        }
        for (m, node) in next.iter().enumerate() {
            nodes.insert((j, m), node.clone());
        }
        current = next;
    }
    Ok(WaveletTree {
        kind: TreeKind::Wpt,
        filters: filters.clone(),
        boundary: BoundaryMode::Periodic,
        max_level: levels,
        input_len: frame.len(),
        start_index: frame.start_index(),
        sample_rate_hz: frame.sample_rate_hz(),
        nodes,
    })
}

/// Rebuilds the input from the leaves of a packet tree.
pub fn wpt_reconstruct(tree: &WaveletTree) -> Result<Frame> {
    if tree.kind != TreeKind::Wpt {
        return Err(Error::Structure("expected a WPT tree".into()));
    }
    let mut current: Vec<Vec<f64>> = (0..1usize << tree.max_level)
        .map(|m| check_node(tree, tree.max_level, m).map(<[f64]>::to_vec))
        .collect::<Result<_>>()?;
    while current.len() > 1 {
        current = current
            .chunks_exact(2)
            .map(|pair| synthesis_step(&pair[0], &pair[1], &tree.filters))
            .collect();
    }
    Frame::new(current.pop().unwrap_or_default(), tree.start_index, tree.sample_rate_hz)
}

/// Shannon entropy (natural log) of the normalized energy distribution of
/// one node. Returns `(entropy, degenerate)`; an all-zero node is
/// degenerate with entropy 0.
pub fn node_entropy(coeffs: &[f64]) -> (f64, bool) {
    let total: f64 = coeffs.iter().map(|w| w * w).sum();
    if total <= 0.0 || !total.is_finite() {
        return (0.0, true);
    }
    let entropy = coeffs
        .iter()
        .map(|w| w * w / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    (entropy, false)
}

/// Entropies of the nodes of one decomposition level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelEntropy {
    pub level: usize,
    pub entropies: Vec<f64>,
    /// Entropies divided by the level total; all zero when the total is 0.
    pub normalized: Vec<f64>,
    /// Per-node flag for all-zero coefficient sets.
    pub degenerate: Vec<bool>,
}

impl LevelEntropy {
    /// True when no node of the level carries positive entropy.
    pub fn is_degenerate(&self) -> bool {
        self.entropies.iter().all(|&e| e == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyFeature {
    pub levels: Vec<LevelEntropy>,
}

impl EntropyFeature {
    /// Normalized entropies of all levels stacked, shallowest first.
    pub fn stacked(&self) -> Vec<f64> {
        self.levels
            .iter()
            .flat_map(|l| l.normalized.iter().copied())
            .collect()
    }

    pub fn all_degenerate(&self) -> bool {
        self.levels.iter().all(|l| l.degenerate.iter().all(|&d| d))
    }
}

/// Per-node wavelet-packet entropy, normalized within each level.
pub fn wp_entropy(tree: &WaveletTree) -> Result<EntropyFeature> {
    if tree.max_level == 0 {
        return Err(Error::Structure("tree has no decomposition levels".into()));
    }
    let levels = (1..=tree.max_level)
        .map(|j| {
            let (entropies, degenerate): (Vec<f64>, Vec<bool>) =
                tree.level(j).into_iter().map(node_entropy).unzip();
            let total: f64 = entropies.iter().sum();
            let normalized = if total > 0.0 {
                entropies.iter().map(|e| e / total).collect()
            } else {
                vec![0.0; entropies.len()]
            };
            LevelEntropy {
                level: j,
                entropies,
                normalized,
                degenerate,
            }
        })
        .collect();
    Ok(EntropyFeature { levels })
}

/// Layout of the wavelet-packet entropy feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct WptMapConfig {
    pub nominal_hz: f64,
    pub frames_per_cycle: usize,
    pub cycles: usize,
    pub levels: usize,
    pub wavelet: WaveletFilterPair,
}

impl Default for WptMapConfig {
    fn default() -> Self {
        Self {
            nominal_hz: 50.0,
            frames_per_cycle: 4,
            cycles: 3,
            levels: 3,
            wavelet: WaveletFilterPair::db9(),
        }
    }
}

/// Column-per-frame matrix of stacked normalized entropies.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyMap {
    /// `rows x cols`, row-major. Rows are nodes of levels 1..=L stacked.
    pub values: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    /// One flag per column: every node of that frame was all-zero.
    pub degenerate: Vec<bool>,
}

impl EntropyMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }
}

/// Wavelet-packet entropy map over the first `cycles` power cycles of a
/// stream, one column per sub-cycle frame (14 x 12 with the defaults).
///
/// Each frame is zero-padded up to the shortest length the decomposition
/// accepts for the configured wavelet and depth.
pub fn wpt_entropy_feature_map(stream: &SampleStream, config: &WptMapConfig) -> Result<EntropyMap> {
    let samples_per_cycle = stream.sample_rate_hz() / config.nominal_hz;
    let frame_len = (samples_per_cycle / config.frames_per_cycle as f64).round() as usize;
    let cols = config.frames_per_cycle * config.cycles;
    let needed = (samples_per_cycle * config.cycles as f64).ceil() as usize;
    if frame_len == 0 || stream.len() < needed.max(frame_len * cols) {
        return Err(Error::Length {
            needed: needed.max(frame_len * cols),
            available: stream.len(),
        });
    }
    let step = 1usize << config.levels;
    let mut padded_len = frame_len.div_ceil(step) * step;
    padded_len = padded_len.max(config.wavelet.len() * step);

    let rows: usize = (1..=config.levels).map(|j| 1usize << j).sum();
    let mut values = vec![0.0; rows * cols];
    let mut degenerate = Vec::with_capacity(cols);
    for c in 0..cols {
        let start = (c as f64 * samples_per_cycle / config.frames_per_cycle as f64).round() as usize;
        let mut buf = stream.samples()[start..start + frame_len].to_vec();
        buf.resize(padded_len, 0.0);
        let frame = Frame::new(buf, start, stream.sample_rate_hz())?;
        let tree = wpt_decompose(&frame, &config.wavelet, config.levels)?;
        let feature = wp_entropy(&tree)?;
        degenerate.push(feature.all_degenerate());
        for (r, v) in feature.stacked().into_iter().enumerate() {
            values[r * cols + c] = v;
        }
    }
    Ok(EntropyMap {
        values,
        rows,
        cols,
        degenerate,
    })
}

/// Top half-band of a stream: the first-level DWT detail (`d_1`) with db9.
///
/// The output runs at half the input rate and has `ceil(len / 2)` samples;
/// odd-length input is padded with one zero.
pub fn highband_extract(stream: &SampleStream) -> Result<SampleStream> {
    highband_extract_with(stream, &WaveletFilterPair::db9())
}

pub fn highband_extract_with(
    stream: &SampleStream,
    filters: &WaveletFilterPair,
) -> Result<SampleStream> {
    let mut samples = stream.samples().to_vec();
    if samples.len() % 2 == 1 {
        samples.push(0.0);
    }
    if samples.len() < 2 * filters.len() {
        return Err(Error::Length {
            needed: 2 * filters.len(),
            available: stream.len(),
        });
    }
    let detail = analysis_step(&samples, filters.highpass());
    SampleStream::new(detail, stream.sample_rate_hz() / 2.0, stream.channel())
}
