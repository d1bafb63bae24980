//! Sample buffering, framing, windowing and spectral primitives.
//!
//! Everything downstream consumes [`Frame`]s cut from a [`SampleStream`].
//! The FFT is an iterative radix-2 decimation-in-time transform restricted
//! to power-of-two lengths.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical quantity carried by a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Current,
    Voltage,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Current => "current",
            Channel::Voltage => "voltage",
        }
    }
}

impl std::str::FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "current" => Ok(Channel::Current),
            "voltage" => Ok(Channel::Voltage),
            other => Err(Error::Parameter(format!("unknown channel label `{other}`"))),
        }
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if rate.is_finite() && rate > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidRate(rate))
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

/// A digitized waveform with its sampling metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStream {
    samples: Vec<f64>,
    sample_rate_hz: f64,
    channel: Channel,
}

impl SampleStream {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64, channel: Channel) -> Result<Self> {
        check_rate(sample_rate_hz)?;
        check_finite(&samples)?;
        Ok(Self {
            samples,
            sample_rate_hz,
            channel,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    /// Cuts `len` samples starting at `start` into a frame.
    pub fn frame(&self, start: usize, len: usize) -> Result<Frame> {
        let end = start.checked_add(len).filter(|&e| e <= self.samples.len()).ok_or(
            Error::Length {
                needed: start.saturating_add(len),
                available: self.samples.len(),
            },
        )?;
        Ok(Frame {
            values: self.samples[start..end].to_vec(),
            start_index: start,
            sample_rate_hz: self.sample_rate_hz,
        })
    }

    /// Same stream with different samples, keeping rate and channel.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, self.sample_rate_hz, self.channel)
    }
}

/// A fixed-length window of samples taken from a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    values: Vec<f64>,
    start_index: usize,
    sample_rate_hz: f64,
}

impl Frame {
    pub fn new(values: Vec<f64>, start_index: usize, sample_rate_hz: f64) -> Result<Self> {
        check_rate(sample_rate_hz)?;
        check_finite(&values)?;
        Ok(Self {
            values,
            start_index,
            sample_rate_hz,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn start_index(&self) -> usize {
        self.start_index
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }
}

/// Window coefficients, one per frame sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowCoeffs(Vec<f64>);

impl WindowCoeffs {
    pub fn coefficients(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Periodic Hann window: `0.5 - 0.5 cos(2 pi j / N)`, unnormalized.
pub fn hann_window(n: usize) -> Result<WindowCoeffs> {
    if n < 2 {
        return Err(Error::InvalidSize(format!("window length {n} < 2")));
    }
    let coeffs = (0..n)
        .map(|j| 0.5 - 0.5 * (2.0 * PI * j as f64 / n as f64).cos())
        .collect();
    Ok(WindowCoeffs(coeffs))
}

/// Hop between frame starts for a given overlap.
pub fn hop_length(frame_len: usize, overlap_fraction: f64) -> Result<usize> {
    if frame_len < 2 {
        return Err(Error::InvalidSize(format!("frame length {frame_len} < 2")));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(Error::Parameter(format!(
            "overlap fraction {overlap_fraction} outside [0, 1)"
        )));
    }
    let hop = (frame_len as f64 * (1.0 - overlap_fraction)).round() as usize;
    Ok(hop.max(1))
}

/// Splits a stream into overlapping frames starting at sample 0.
///
/// The trailing partial frame is dropped; a stream shorter than one frame
/// yields no frames.
pub fn frame_stream(
    stream: &SampleStream,
    frame_len: usize,
    overlap_fraction: f64,
) -> Result<Vec<Frame>> {
    let hop = hop_length(frame_len, overlap_fraction)?;
    if stream.len() < frame_len {
        return Ok(Vec::new());
    }
    let count = (stream.len() - frame_len) / hop + 1;
    (0..count)
        .map(|i| stream.frame(i * hop, frame_len))
        .collect()
}

/// Complex DFT bins of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    bins: Vec<Complex64>,
    resolution_hz: f64,
}

impl Spectrum {
    pub fn new(bins: Vec<Complex64>, resolution_hz: f64) -> Self {
        Self {
            bins,
            resolution_hz,
        }
    }

    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Bin spacing `f_s / N`.
    pub fn resolution_hz(&self) -> f64 {
        self.resolution_hz
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.resolution_hz * self.bins.len() as f64
    }

    pub fn bin_frequency(&self, m: usize) -> f64 {
        m as f64 * self.resolution_hz
    }

    /// Time-domain samples recovered by the inverse transform.
    pub fn inverse(&self) -> Result<Vec<Complex64>> {
        let mut buf = self.bins.clone();
        fft_in_place(&mut buf, true)?;
        Ok(buf)
    }
}

/// In-place radix-2 decimation-in-time FFT.
///
/// With `inverse` set, computes the inverse transform including the `1/N`
/// scale.
pub fn fft_in_place(buf: &mut [Complex64], inverse: bool) -> Result<()> {
    let n = buf.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::InvalidSize(format!(
            "FFT length {n} is not a power of two"
        )));
    }
    if n == 1 {
        return Ok(());
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        // Twiddles evaluated directly rather than by recurrence to keep
        // round-off flat across stages.
        let twiddles: Vec<Complex64> = (0..half)
            .map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * k as f64 / len as f64))
            .collect();
        for chunk in buf.chunks_exact_mut(len) {
            let (lo, hi) = chunk.split_at_mut(half);
            for ((a, b), w) in lo.iter_mut().zip(hi.iter_mut()).zip(&twiddles) {
                let t = *b * w;
                *b = *a - t;
                *a += t;
            }
        }
        len <<= 1;
    }
    if inverse {
        let scale = 1.0 / n as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
    Ok(())
}

/// DFT of a frame, optionally multiplied by a window first.
pub fn fft(frame: &Frame, window: Option<&WindowCoeffs>) -> Result<Spectrum> {
    let n = frame.len();
    let mut buf: Vec<Complex64> = match window {
        Some(w) => {
            if w.len() != n {
                return Err(Error::InvalidSize(format!(
                    "window length {} does not match frame length {n}",
                    w.len()
                )));
            }
            frame
                .values()
                .iter()
                .zip(w.coefficients())
                .map(|(x, c)| Complex64::new(x * c, 0.0))
                .collect()
        }
        None => frame
            .values()
            .iter()
            .map(|&x| Complex64::new(x, 0.0))
            .collect(),
    };
    fft_in_place(&mut buf, false)?;
    Ok(Spectrum::new(buf, frame.sample_rate_hz() / n as f64))
}

/// Root-mean-square of a slice; `None` when empty.
pub fn rms_of(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let ms = values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64;
    Some(ms.sqrt())
}

pub fn rms(frame: &Frame) -> Result<f64> {
    rms_of(frame.values()).ok_or_else(|| Error::InvalidSize("empty frame".into()))
}

pub fn mean_of(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Subtracts the frame mean from every sample.
pub fn remove_dc(frame: &Frame) -> Result<Frame> {
    if frame.is_empty() {
        return Err(Error::InvalidSize("empty frame".into()));
    }
    let mean = mean_of(frame.values());
    Ok(Frame {
        values: frame.values().iter().map(|v| v - mean).collect(),
        start_index: frame.start_index,
        sample_rate_hz: frame.sample_rate_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(n: usize, seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), 0, 1000.0).unwrap()
    }

    /// Direct O(N^2) evaluation of the DFT sum.
    fn naive_dft(x: &[f64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|m| {
                x.iter()
                    .enumerate()
                    .map(|(k, &v)| {
                        let angle = -2.0 * PI * ((m * k) % n) as f64 / n as f64;
                        Complex64::from_polar(v, angle)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn hann_small_sizes() {
        let w = hann_window(4).unwrap();
        let expected = [0.0, 0.5, 1.0, 0.5];
        for (a, b) in w.coefficients().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let w = hann_window(2).unwrap();
        assert!((w.coefficients()[0]).abs() < 1e-15);
        assert!((w.coefficients()[1] - 1.0).abs() < 1e-15);
        assert!(hann_window(1).is_err());
    }

    #[test]
    fn hann_512_sum_matches_naive_loop() {
        let mut oracle = 0.0;
        for j in 0..512 {
            oracle += 0.5 - 0.5 * (2.0 * PI * j as f64 / 512.0).cos();
        }
        let sum: f64 = hann_window(512).unwrap().coefficients().iter().sum();
        assert!((sum - oracle).abs() < 1e-9);
        // Periodic Hann sums to N/2.
        assert!((sum - 256.0).abs() < 1e-9);
        assert!(hann_window(512)
            .unwrap()
            .coefficients()
            .iter()
            .all(|c| (0.0..=1.0).contains(c)));
    }

    #[test]
    fn framing_counts() {
        let s = |n: usize| SampleStream::new(vec![0.0; n], 20_000.0, Channel::Current).unwrap();
        assert_eq!(frame_stream(&s(1792), 512, 0.5).unwrap().len(), 6);
        assert_eq!(frame_stream(&s(512), 512, 0.5).unwrap().len(), 1);
        assert!(frame_stream(&s(100), 512, 0.5).unwrap().is_empty());

        // Enumerate hops directly.
        let mut oracle = 0;
        let mut start = 0;
        while start + 512 <= 10_000 {
            oracle += 1;
            start += 256;
        }
        let frames = frame_stream(&s(10_000), 512, 0.5).unwrap();
        assert_eq!(frames.len(), oracle);
        assert_eq!(oracle, 38);
        for (i, f) in frames.iter().enumerate() {
            assert_eq!(f.start_index(), i * 256);
        }
        assert!(frame_stream(&s(10), 1, 0.5).is_err());
        assert!(frame_stream(&s(10), 4, 1.0).is_err());
    }

    #[test]
    fn framing_covers_all_but_remainder() {
        let n = 3000;
        let stream =
            SampleStream::new((0..n).map(|i| i as f64).collect(), 1.0, Channel::Voltage).unwrap();
        let frames = frame_stream(&stream, 512, 0.5).unwrap();
        let mut covered = vec![false; n];
        for f in &frames {
            for (k, v) in f.values().iter().enumerate() {
                assert_eq!(*v as usize, f.start_index() + k);
                covered[f.start_index() + k] = true;
            }
        }
        let last_end = frames.last().unwrap().start_index() + 512;
        assert!(covered[..last_end].iter().all(|&c| c));
    }

    #[test]
    fn impulse_transforms_to_ones() {
        let mut x = vec![0.0; 16];
        x[0] = 1.0;
        let spec = fft(&Frame::new(x, 0, 16.0).unwrap(), None).unwrap();
        for b in spec.bins() {
            assert!((b - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
        assert_eq!(spec.resolution_hz(), 1.0);
    }

    #[test]
    fn cosine_on_bin_is_orthogonal() {
        let n = 64;
        let k = 5;
        let x = (0..n)
            .map(|j| (2.0 * PI * (k * j) as f64 / n as f64).cos())
            .collect();
        let spec = fft(&Frame::new(x, 0, 64.0).unwrap(), None).unwrap();
        for (m, b) in spec.bins().iter().enumerate() {
            if m == k || m == n - k {
                assert!((b.norm() - n as f64 / 2.0).abs() < 1e-9);
            } else {
                assert!(b.norm() < 1e-9, "bin {m} = {b}");
            }
        }
    }

    #[test]
    fn fft_matches_naive_dft_1024() {
        let frame = random_frame(1024, 7);
        let oracle = naive_dft(frame.values());
        let spec = fft(&frame, None).unwrap();
        let err = spec
            .bins()
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err <= 1e-9, "max error {err}");
    }

    #[test]
    fn windowed_round_trip() {
        let frame = random_frame(512, 3);
        let w = hann_window(512).unwrap();
        let back = fft(&frame, Some(&w)).unwrap().inverse().unwrap();
        for ((x, c), y) in frame.values().iter().zip(w.coefficients()).zip(&back) {
            assert!((x * c - y.re).abs() <= 1e-9);
            assert!(y.im.abs() <= 1e-9);
        }
    }

    #[test]
    fn fft_rejects_non_power_of_two() {
        let frame = Frame::new(vec![1.0; 12], 0, 1.0).unwrap();
        assert!(matches!(fft(&frame, None), Err(Error::InvalidSize(_))));
        let w = hann_window(8).unwrap();
        let frame = Frame::new(vec![1.0; 16], 0, 1.0).unwrap();
        assert!(fft(&frame, Some(&w)).is_err());
    }

    #[test]
    fn rms_cases() {
        let c = Frame::new(vec![-3.0; 10], 0, 1.0).unwrap();
        assert!((rms(&c).unwrap() - 3.0).abs() < 1e-15);
        let a = 2.5;
        let sine = Frame::new(
            (0..400)
                .map(|j| a * (2.0 * PI * j as f64 / 100.0).sin())
                .collect(),
            0,
            5000.0,
        )
        .unwrap();
        assert!((rms(&sine).unwrap() - a / 2f64.sqrt()).abs() < 1e-6);
        let frame = random_frame(333, 11);
        let mut acc = 0.0;
        for v in frame.values() {
            acc += v * v;
        }
        let oracle = (acc / 333.0).sqrt();
        assert!((rms(&frame).unwrap() - oracle).abs() < 1e-12);
        assert!(rms(&Frame::new(vec![], 0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn dc_removal() {
        let c = remove_dc(&Frame::new(vec![5.0; 8], 3, 1.0).unwrap()).unwrap();
        assert!(c.values().iter().all(|v| v.abs() < 1e-12));
        assert_eq!(c.start_index(), 3);

        let sine: Vec<f64> = (0..200)
            .map(|j| (2.0 * PI * j as f64 / 50.0).sin())
            .collect();
        let out = remove_dc(&Frame::new(sine.clone(), 0, 1.0).unwrap()).unwrap();
        for (a, b) in out.values().iter().zip(&sine) {
            assert!((a - b).abs() < 1e-12);
        }
        let shifted: Vec<f64> = sine.iter().map(|v| v + 3.0).collect();
        let out = remove_dc(&Frame::new(shifted.clone(), 0, 1.0).unwrap()).unwrap();
        let mean = shifted.iter().sum::<f64>() / shifted.len() as f64;
        for (a, b) in out.values().iter().zip(&shifted) {
            assert!((a - (b - mean)).abs() < 1e-12);
        }
        assert!(mean_of(out.values()).abs() < 1e-12);
        assert!(remove_dc(&Frame::new(vec![], 0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn stream_rejects_bad_input() {
        assert!(SampleStream::new(vec![1.0], 0.0, Channel::Current).is_err());
        assert!(matches!(
            SampleStream::new(vec![1.0, f64::NAN], 1.0, Channel::Current),
            Err(Error::NonFinite(1))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn parseval(exp in 1u32..=12, seed in any::<u64>()) {
                let n = 1usize << exp;
                let frame = random_frame(n, seed);
                let time: f64 = frame.values().iter().map(|v| v * v).sum();
                let spec = fft(&frame, None).unwrap();
                let freq: f64 = spec.bins().iter().map(|b| b.norm_sqr()).sum::<f64>() / n as f64;
                prop_assert!((time - freq).abs() <= 1e-6 * time.max(1e-300));
            }

            #[test]
            fn linearity(seed in any::<u64>(), a in -5.0f64..5.0, b in -5.0f64..5.0) {
                let x = random_frame(256, seed);
                let y = random_frame(256, seed ^ 0xdead_beef);
                let combo: Vec<f64> = x.values().iter().zip(y.values()).map(|(p, q)| a * p + b * q).collect();
                let lhs = fft(&Frame::new(combo, 0, 1.0).unwrap(), None).unwrap();
                let fx = fft(&x, None).unwrap();
                let fy = fft(&y, None).unwrap();
                for ((l, p), q) in lhs.bins().iter().zip(fx.bins()).zip(fy.bins()) {
                    prop_assert!((l - (p * a + q * b)).norm() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn conjugate_symmetry_on_100_frames() {
        for seed in 0..100 {
            let frame = random_frame(128, seed);
            let spec = fft(&frame, None).unwrap();
            let n = spec.len();
            for m in 1..n {
                assert!((spec.bins()[m] - spec.bins()[n - m].conj()).norm() < 1e-9);
            }
        }
    }
}
