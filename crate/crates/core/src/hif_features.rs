//! Short-time FFT octave-band log-energy features for HIF classification.
//!
//! A 512-sample Hann-windowed frame yields one vector of band log-energies;
//! six 50%-overlapped frames (1792 samples, 4.48 cycles at 50 Hz and
//! 20 kHz) are stacked column-wise into an 8 x 6 [`FeatureMap`].

use crate::error::{Error, Result};
use crate::signal::{fft, hann_window, remove_dc, Frame, Spectrum, WindowCoeffs};

/// Added to every band mean before the logarithm.
pub const ENERGY_FLOOR: f64 = 1e-20;

pub const HIF_FRAME_LEN: usize = 512;
pub const HIF_HOP: usize = 256;
pub const HIF_FRAMES_PER_MAP: usize = 6;
pub const HIF_BANDS: usize = 8;
/// Samples covered by one feature map: `512 + 5 * 256`.
pub const HIF_MAP_SPAN: usize = HIF_FRAME_LEN + (HIF_FRAMES_PER_MAP - 1) * HIF_HOP;

const HIF_EDGES_20K: [f64; 9] = [
    0.0, 78.0, 156.0, 312.0, 625.0, 1250.0, 2500.0, 5000.0, 10_000.0,
];

/// Ascending band boundaries in Hz. Band `b` covers `[edges[b], edges[b+1])`;
/// the top band also includes its upper edge.
#[derive(Debug, Clone, PartialEq)]
pub struct BandPlan {
    edges: Vec<f64>,
}

impl BandPlan {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::Plan("a band plan needs at least two edges".into()));
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) || edges[0] < 0.0 {
            return Err(Error::Plan(format!(
                "band edges must be nonnegative and strictly increasing: {edges:?}"
            )));
        }
        Ok(Self { edges })
    }

    /// `bands` octave bands ending at `top_hz`. With `from_dc` the lowest
    /// band is widened down to 0 Hz.
    pub fn octave(top_hz: f64, bands: usize, from_dc: bool) -> Result<Self> {
        if bands == 0 || !(top_hz > 0.0) {
            return Err(Error::Plan("octave plan needs a positive top and >= 1 band".into()));
        }
        let mut edges: Vec<f64> = (0..=bands)
            .map(|i| top_hz / (1u64 << (bands - i)) as f64)
            .collect();
        if from_dc {
            edges[0] = 0.0;
        }
        Self::new(edges)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn band_count(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn top_hz(&self) -> f64 {
        *self.edges.last().expect("plan has edges")
    }

    /// Band containing frequency `f`, if any.
    pub fn band_of(&self, f: f64) -> Option<usize> {
        let last = self.band_count() - 1;
        if f == self.top_hz() {
            return Some(last);
        }
        self.edges.windows(2).position(|w| w[0] <= f && f < w[1])
    }

    /// Bin indices per band for an `n`-point spectrum at `sample_rate_hz`.
    /// Bin 0 (DC) and bins above Nyquist are never assigned.
    pub fn bin_map(&self, n: usize, sample_rate_hz: f64) -> Result<Vec<Vec<usize>>> {
        let nyquist = sample_rate_hz / 2.0;
        if self.top_hz() > nyquist * (1.0 + 1e-12) {
            return Err(Error::Plan(format!(
                "plan tops out at {} Hz above Nyquist {nyquist} Hz",
                self.top_hz()
            )));
        }
        let resolution = sample_rate_hz / n as f64;
        let mut bins = vec![Vec::new(); self.band_count()];
        for m in 1..=n / 2 {
            if let Some(b) = self.band_of(m as f64 * resolution) {
                bins[b].push(m);
            }
        }
        if let Some(empty) = bins.iter().position(Vec::is_empty) {
            return Err(Error::Plan(format!(
                "band {} [{}, {}) Hz contains no bins at resolution {resolution} Hz",
                empty + 1,
                self.edges[empty],
                self.edges[empty + 1]
            )));
        }
        Ok(bins)
    }
}

/// Canonical octave plan for a sample rate: the eight HIF bands at 20 kHz,
/// the seven load-identification bands (39.06 Hz to 5 kHz) at 10 kHz.
pub fn default_band_plan(sample_rate_hz: f64) -> Result<BandPlan> {
    if sample_rate_hz == 20_000.0 {
        BandPlan::new(HIF_EDGES_20K.to_vec())
    } else if sample_rate_hz == 10_000.0 {
        BandPlan::octave(5000.0, 7, false)
    } else {
        Err(Error::UnsupportedRate(sample_rate_hz))
    }
}

/// Log10 mean band energies of one frame, ascending frequency order.
#[derive(Debug, Clone, PartialEq)]
pub struct BandEnergies(pub Vec<f64>);

impl BandEnergies {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Mean `|X[m]|^2` per band, before the log.
pub fn band_mean_energies(spectrum: &Spectrum, plan: &BandPlan) -> Result<Vec<f64>> {
    let bins = plan.bin_map(spectrum.len(), spectrum.sample_rate_hz())?;
    Ok(mean_energies(spectrum, &bins))
}

fn mean_energies(spectrum: &Spectrum, bins: &[Vec<usize>]) -> Vec<f64> {
    bins.iter()
        .map(|idx| {
            idx.iter().map(|&m| spectrum.bins()[m].norm_sqr()).sum::<f64>() / idx.len() as f64
        })
        .collect()
}

fn to_log(means: Vec<f64>) -> BandEnergies {
    BandEnergies(means.into_iter().map(|e| (e + ENERGY_FLOOR).log10()).collect())
}

pub fn band_energies(spectrum: &Spectrum, plan: &BandPlan) -> Result<BandEnergies> {
    band_mean_energies(spectrum, plan).map(to_log)
}

/// 8 x 6 matrix of band log-energies; column `i` belongs to frame `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    /// Row-major `bands x frames`.
    values: Vec<f64>,
    bands: usize,
    frames: usize,
    span: (usize, usize),
    sample_rate_hz: f64,
}

impl FeatureMap {
    pub fn from_columns(
        columns: &[BandEnergies],
        span: (usize, usize),
        sample_rate_hz: f64,
    ) -> Result<Self> {
        let frames = columns.len();
        let bands = columns.first().map_or(0, |c| c.0.len());
        if frames == 0 || columns.iter().any(|c| c.0.len() != bands) {
            return Err(Error::Shape("feature map columns must share a band count".into()));
        }
        let mut values = vec![0.0; bands * frames];
        for (f, col) in columns.iter().enumerate() {
            for (b, v) in col.0.iter().enumerate() {
                values[b * frames + f] = *v;
            }
        }
        Ok(Self {
            values,
            bands,
            frames,
            span,
            sample_rate_hz,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn get(&self, band: usize, frame: usize) -> f64 {
        self.values[band * self.frames + frame]
    }

    pub fn column(&self, frame: usize) -> Vec<f64> {
        (0..self.bands).map(|b| self.get(b, frame)).collect()
    }

    /// `[start, end)` sample span in the source stream.
    pub fn span(&self) -> (usize, usize) {
        self.span
    }

    pub fn span_samples(&self) -> usize {
        self.span.1 - self.span.0
    }

    pub fn span_cycles(&self, nominal_hz: f64) -> f64 {
        self.span_samples() as f64 / self.sample_rate_hz * nominal_hz
    }

    /// Frobenius distance to another map of the same shape.
    pub fn distance(&self, other: &FeatureMap) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Largest L-infinity distance between any two columns.
    pub fn max_column_spread(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.frames {
            for j in i + 1..self.frames {
                let d = (0..self.bands)
                    .map(|b| (self.get(b, i) - self.get(b, j)).abs())
                    .fold(0.0, f64::max);
                worst = worst.max(d);
            }
        }
        worst
    }
}

/// Reusable extractor holding the window and the bin-to-band table.
#[derive(Debug, Clone)]
pub struct HifFeatureExtractor {
    plan: BandPlan,
    window: WindowCoeffs,
    bins: Vec<Vec<usize>>,
    sample_rate_hz: f64,
}

impl HifFeatureExtractor {
    pub fn new(sample_rate_hz: f64) -> Result<Self> {
        Self::with_plan(default_band_plan(sample_rate_hz)?, sample_rate_hz)
    }

    pub fn with_plan(plan: BandPlan, sample_rate_hz: f64) -> Result<Self> {
        let bins = plan.bin_map(HIF_FRAME_LEN, sample_rate_hz)?;
        Ok(Self {
            plan,
            window: hann_window(HIF_FRAME_LEN)?,
            bins,
            sample_rate_hz,
        })
    }

    pub fn plan(&self) -> &BandPlan {
        &self.plan
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    /// DC removal, Hann window, FFT, band log-energies.
    pub fn vector(&self, frame: &Frame) -> Result<BandEnergies> {
        if frame.len() != HIF_FRAME_LEN {
            return Err(Error::Shape(format!(
                "expected {HIF_FRAME_LEN}-sample frame, got {}",
                frame.len()
            )));
        }
        if frame.sample_rate_hz() != self.sample_rate_hz {
            return Err(Error::Plan(format!(
                "frame rate {} Hz does not match plan rate {} Hz",
                frame.sample_rate_hz(),
                self.sample_rate_hz
            )));
        }
        let spectrum = fft(&remove_dc(frame)?, Some(&self.window))?;
        Ok(to_log(mean_energies(&spectrum, &self.bins)))
    }

    /// Assembles a map from exactly six consecutive half-overlapped frames.
    pub fn map(&self, frames: &[Frame]) -> Result<FeatureMap> {
        check_map_frames(frames)?;
        let columns = frames
            .iter()
            .map(|f| self.vector(f))
            .collect::<Result<Vec<_>>>()?;
        self.map_from_vectors(&columns, frames[0].start_index())
    }

    /// Assembles a map from six precomputed column vectors whose first
    /// frame starts at `start`.
    pub fn map_from_vectors(&self, columns: &[BandEnergies], start: usize) -> Result<FeatureMap> {
        if columns.len() != HIF_FRAMES_PER_MAP {
            return Err(Error::Shape(format!(
                "expected {HIF_FRAMES_PER_MAP} columns, got {}",
                columns.len()
            )));
        }
        FeatureMap::from_columns(columns, (start, start + HIF_MAP_SPAN), self.sample_rate_hz)
    }

    /// Map over `HIF_MAP_SPAN` samples starting at `start`.
    pub fn map_at(&self, samples: &[f64], start: usize) -> Result<FeatureMap> {
        if start + HIF_MAP_SPAN > samples.len() {
            return Err(Error::Length {
                needed: start + HIF_MAP_SPAN,
                available: samples.len(),
            });
        }
        let frames = (0..HIF_FRAMES_PER_MAP)
            .map(|i| {
                let s = start + i * HIF_HOP;
                Frame::new(samples[s..s + HIF_FRAME_LEN].to_vec(), s, self.sample_rate_hz)
            })
            .collect::<Result<Vec<_>>>()?;
        self.map(&frames)
    }
}

fn check_map_frames(frames: &[Frame]) -> Result<()> {
    if frames.len() != HIF_FRAMES_PER_MAP {
        return Err(Error::Shape(format!(
            "expected {HIF_FRAMES_PER_MAP} frames, got {}",
            frames.len()
        )));
    }
    if let Some(f) = frames.iter().find(|f| f.len() != HIF_FRAME_LEN) {
        return Err(Error::Shape(format!(
            "expected {HIF_FRAME_LEN}-sample frames, got {}",
            f.len()
        )));
    }
    if frames
        .windows(2)
        .any(|w| w[1].start_index() != w[0].start_index() + HIF_HOP)
    {
        return Err(Error::Shape(format!("frames must advance by {HIF_HOP} samples")));
    }
    Ok(())
}

/// Feature map from six consecutive 512-sample frames at 20 kHz.
pub fn feature_map(frames: &[Frame]) -> Result<FeatureMap> {
    check_map_frames(frames)?;
    HifFeatureExtractor::new(frames[0].sample_rate_hz())?.map(frames)
}
