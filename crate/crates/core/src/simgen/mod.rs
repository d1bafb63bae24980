//! Seeded synthetic signal generators.
//!
//! Every generator is a pure function of its parameters and seed. Random
//! streams come from ChaCha8 so output is identical across platforms.

mod appliances;
pub mod corpus;
mod hif;
mod loads;
mod transients;

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::signal::{fft_in_place, rms_of, Channel, SampleStream};

pub use appliances::{
    gen_activation, gen_activation_series, gen_aggregate, ApplianceProfile, ApplianceState,
    DisaggWindow, PlacedActivation,
};
pub use hif::{gen_hif, HifModelParams, Surface};
pub use loads::{gen_load_event, LoadClass, LoadEvent, LoadEventSpec};
pub use transients::{gen_transient, TransientKind};

/// Highest frequency any generator emits, as a fraction of the sample rate.
pub const BAND_LIMIT_FRACTION: f64 = 0.45;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent seed for a sub-generator.
pub fn subseed(seed: u64, stream: u64) -> u64 {
    // SplitMix64 finalizer over the pair.
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Removes content above `cutoff_hz` with an FFT brick-wall.
///
/// The input is extended by its mirror image and then held at its first
/// value up to a power of two, so the periodic extension has no jumps and
/// the edges do not ring.
pub fn band_limit(samples: &[f64], sample_rate_hz: f64, cutoff_hz: f64) -> Vec<f64> {
    if samples.is_empty() {
        return Vec::new();
    }
    let n = (2 * samples.len()).next_power_of_two();
    let mut buf: Vec<Complex64> = samples
        .iter()
        .chain(samples.iter().rev())
        .map(|&x| Complex64::new(x, 0.0))
        .collect();
    buf.resize(n, Complex64::new(samples[0], 0.0));
    fft_in_place(&mut buf, false).expect("power-of-two length");
    let resolution = sample_rate_hz / n as f64;
    for m in 1..n {
        let f = m.min(n - m) as f64 * resolution;
        if f > cutoff_hz {
            buf[m] = Complex64::new(0.0, 0.0);
        }
    }
    fft_in_place(&mut buf, true).expect("power-of-two length");
    buf.truncate(samples.len());
    buf.into_iter().map(|c| c.re).collect()
}

/// Zero-mean Gaussian noise band-limited to `BAND_LIMIT_FRACTION * fs`
/// and rescaled to exactly `rms` over the returned length.
pub fn band_limited_noise(len: usize, sample_rate_hz: f64, rms: f64, seed: u64) -> Vec<f64> {
    if len == 0 || rms == 0.0 {
        return vec![0.0; len];
    }
    let mut r = self::rng(seed);
    let raw: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut r)).collect();
    let mut noise = band_limit(&raw, sample_rate_hz, BAND_LIMIT_FRACTION * sample_rate_hz);
    let mean = noise.iter().sum::<f64>() / len as f64;
    noise.iter_mut().for_each(|v| *v -= mean);
    let actual = rms_of(&noise).unwrap_or(0.0);
    if actual > 0.0 {
        let scale = rms / actual;
        noise.iter_mut().for_each(|v| *v *= scale);
    }
    noise
}

fn check_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} must be positive, got {value}")))
    }
}

/// Sinusoid of `rms_amps` at `f0_hz`, plus Gaussian noise at `noise_snr_db`
/// (signal power over noise power) when given.
pub fn gen_load_current(
    rms_amps: f64,
    f0_hz: f64,
    sample_rate_hz: f64,
    duration_s: f64,
    noise_snr_db: Option<f64>,
    seed: u64,
) -> Result<SampleStream> {
    check_positive("rms", rms_amps)?;
    check_positive("f0", f0_hz)?;
    check_positive("sample rate", sample_rate_hz)?;
    check_positive("duration", duration_s)?;
    if f0_hz >= BAND_LIMIT_FRACTION * sample_rate_hz {
        return Err(Error::Parameter(format!(
            "f0 {f0_hz} Hz exceeds the band limit at {sample_rate_hz} Hz"
        )));
    }
    let len = (duration_s * sample_rate_hz).round() as usize;
    let phase = self::rng(subseed(seed, 1)).random_range(0.0..2.0 * PI);
    let mut samples = sinusoid(len, rms_amps, f0_hz, sample_rate_hz, phase);
    if let Some(snr) = noise_snr_db {
        let noise_rms = rms_amps / 10f64.powf(snr / 20.0);
        let noise = band_limited_noise(len, sample_rate_hz, noise_rms, subseed(seed, 2));
        samples.iter_mut().zip(noise).for_each(|(s, n)| *s += n);
    }
    SampleStream::new(samples, sample_rate_hz, Channel::Current)
}

/// `rms * sqrt(2) * sin(2 pi f n / fs + phase)` for `len` samples.
pub fn sinusoid(len: usize, rms: f64, f_hz: f64, sample_rate_hz: f64, phase: f64) -> Vec<f64> {
    let peak = rms * std::f64::consts::SQRT_2;
    (0..len)
        .map(|n| peak * (2.0 * PI * f_hz * n as f64 / sample_rate_hz + phase).sin())
        .collect()
}

/// Phase (of a sine) and amplitude of the `f_hz` component by least-squares
/// projection.
pub fn fundamental_phase(samples: &[f64], f_hz: f64, sample_rate_hz: f64) -> (f64, f64) {
    let (mut s, mut c) = (0.0, 0.0);
    for (n, x) in samples.iter().enumerate() {
        let w = 2.0 * PI * f_hz * n as f64 / sample_rate_hz;
        s += x * w.sin();
        c += x * w.cos();
    }
    // x ~ A sin(w + phi) = A cos(phi) sin(w) + A sin(phi) cos(w)
    (c.atan2(s), 2.0 * (s * s + c * c).sqrt() / samples.len().max(1) as f64)
}

/// Adds a load sinusoid whose RMS is `load_rms_ratio` times the fault RMS.
///
/// With `phase_locked`, the load takes the phase of the fault fundamental;
/// otherwise the phase is drawn from the seed. The fault samples are added
/// unchanged, so `output - load` recovers them exactly.
pub fn superimpose(
    fault: &SampleStream,
    f0_hz: f64,
    load_rms_ratio: f64,
    phase_locked: bool,
    seed: u64,
) -> Result<SampleStream> {
    check_positive("load ratio", load_rms_ratio)?;
    let load = superimposed_load(fault, f0_hz, load_rms_ratio, phase_locked, seed);
    let out = fault
        .samples()
        .iter()
        .zip(&load)
        .map(|(f, l)| f + l)
        .collect();
    fault.with_samples(out)
}

/// The load component [`superimpose`] would add.
pub fn superimposed_load(
    fault: &SampleStream,
    f0_hz: f64,
    load_rms_ratio: f64,
    phase_locked: bool,
    seed: u64,
) -> Vec<f64> {
    let fault_rms = rms_of(fault.samples()).unwrap_or(0.0);
    let (locked, amp) = fundamental_phase(fault.samples(), f0_hz, fault.sample_rate_hz());
    let phase = if phase_locked && amp > 0.0 {
        locked
    } else {
        self::rng(seed).random_range(0.0..2.0 * PI)
    };
    let load_rms = if fault_rms > 0.0 {
        load_rms_ratio * fault_rms
    } else {
        load_rms_ratio
    };
    sinusoid(fault.len(), load_rms, f0_hz, fault.sample_rate_hz(), phase)
}
