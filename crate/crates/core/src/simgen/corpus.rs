//! Labelled 20 kHz current windows for HIF detector training.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    band_limited_noise, gen_hif, gen_transient, rng, sinusoid, subseed, superimpose,
    HifModelParams, Surface, TransientKind,
};
use crate::error::{Error, Result};
use crate::hif_features::HIF_MAP_SPAN;
use crate::signal::{rms_of, Channel, SampleStream};

pub const CORPUS_RATE_HZ: f64 = 20_000.0;
pub const CORPUS_F0_HZ: f64 = 50.0;
pub const LOAD_RATIOS: [f64; 3] = [5.0, 10.0, 20.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowClass {
    Normal,
    Hif,
    Transient,
}

impl WindowClass {
    pub const ALL: [WindowClass; 3] = [WindowClass::Normal, WindowClass::Hif, WindowClass::Transient];

    pub fn as_str(self) -> &'static str {
        match self {
            WindowClass::Normal => "normal",
            WindowClass::Hif => "hif",
            WindowClass::Transient => "transient",
        }
    }
}

impl FromStr for WindowClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WindowClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown window class {s}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub label: WindowClass,
    pub seed: u64,
    /// Short human-readable parameter summary.
    pub params: String,
    pub samples: Vec<f64>,
}

/// Load current amplitude, log-uniform over 0.05-5 A RMS.
fn load_rms<R: Rng>(r: &mut R) -> f64 {
    (r.random_range(0.05f64.ln()..5.0f64.ln())).exp()
}

/// Clean load with a little odd-harmonic distortion and sensor noise.
fn healthy_load(len: usize, seed: u64) -> (Vec<f64>, String) {
    let mut r = rng(subseed(seed, 10));
    let rms = load_rms(&mut r);
    let phase = r.random_range(0.0..2.0 * PI);
    let mut x = sinusoid(len, rms, CORPUS_F0_HZ, CORPUS_RATE_HZ, phase);
    for k in [3.0, 5.0] {
        let h = r.random_range(0.0..0.01);
        let p = r.random_range(0.0..2.0 * PI);
        let comp = sinusoid(len, rms * h, k * CORPUS_F0_HZ, CORPUS_RATE_HZ, p);
        x.iter_mut().zip(comp).for_each(|(a, b)| *a += b);
    }
    let snr = r.random_range(40.0..60.0);
    add_noise(&mut x, snr, subseed(seed, 11));
    (x, format!("rms={rms:.4} snr_db={snr:.1}"))
}

fn add_noise(x: &mut [f64], snr_db: f64, seed: u64) {
    let rms = rms_of(x).unwrap_or(0.0);
    let noise = band_limited_noise(x.len(), CORPUS_RATE_HZ, rms / 10f64.powf(snr_db / 20.0), seed);
    x.iter_mut().zip(noise).for_each(|(a, b)| *a += b);
}

/// A window of `len` samples with no fault and no switching event.
pub fn normal_window(len: usize, seed: u64) -> CorpusItem {
    let (samples, params) = healthy_load(len, seed);
    CorpusItem {
        label: WindowClass::Normal,
        seed,
        params,
        samples,
    }
}

/// A healthy load with a switching transient starting inside the first
/// 60% of the window.
pub fn transient_window(len: usize, seed: u64) -> Result<CorpusItem> {
    let (base, params) = healthy_load(len, seed);
    let mut r = rng(subseed(seed, 20));
    let kind = TransientKind::random(r.random_range(0..4), subseed(seed, 21));
    let at = r.random_range(len / 10..(len * 6) / 10);
    let stream = SampleStream::new(base, CORPUS_RATE_HZ, Channel::Current)?;
    let out = gen_transient(&kind, at, &stream, CORPUS_F0_HZ, subseed(seed, 22))?;
    Ok(CorpusItem {
        label: WindowClass::Transient,
        seed,
        params: format!("{params} kind={} at={at}", kind.name()),
        samples: out.into_samples(),
    })
}

/// Fault current on `surface` under a load `ratio` times stronger.
pub fn hif_window(len: usize, surface: Surface, ratio: f64, seed: u64) -> Result<CorpusItem> {
    let mut r = rng(subseed(seed, 30));
    let drive_rms = r.random_range(2_000.0..11_000.0);
    let drive_peak = drive_rms * std::f64::consts::SQRT_2;
    let warmup = r.random_range(0..4 * 400);
    let total = len + warmup;
    let phase = r.random_range(0.0..2.0 * PI);
    let drive = SampleStream::new(
        sinusoid(total, drive_rms, CORPUS_F0_HZ, CORPUS_RATE_HZ, phase),
        CORPUS_RATE_HZ,
        Channel::Voltage,
    )?;
    let params = HifModelParams::preset(surface, drive_peak, subseed(seed, 31));
    let fault = gen_hif(&params, &drive, subseed(seed, 32))?.current;
    let fault = fault.with_samples(fault.samples()[warmup..].to_vec())?;
    let mixed = superimpose(&fault, CORPUS_F0_HZ, ratio, true, subseed(seed, 33))?;
    let mut samples = mixed.into_samples();
    let snr = r.random_range(40.0..60.0);
    add_noise(&mut samples, snr, subseed(seed, 34));
    Ok(CorpusItem {
        label: WindowClass::Hif,
        seed,
        params: format!(
            "surface={} ratio={ratio} drive_kv={:.2} snr_db={snr:.1}",
            surface.as_str(),
            drive_rms / 1000.0
        ),
        samples,
    })
}

/// Balanced corpus of `per_class` windows of each class, in a seeded
/// shuffled order. HIF windows cycle through every surface and load ratio.
pub fn gen_window_corpus(per_class: usize, len: usize, seed: u64) -> Result<Vec<CorpusItem>> {
    if len < HIF_MAP_SPAN / 2 {
        return Err(Error::Length {
            needed: HIF_MAP_SPAN / 2,
            available: len,
        });
    }
    let mut items = Vec::with_capacity(3 * per_class);
    for i in 0..per_class {
        let s = subseed(seed, 3 * i as u64);
        items.push(normal_window(len, s));
        let s = subseed(seed, 3 * i as u64 + 1);
        let surface = Surface::ALL[i % 3];
        let ratio = LOAD_RATIOS[(i / 3) % 3];
        items.push(hif_window(len, surface, ratio, s)?);
        items.push(transient_window(len, subseed(seed, 3 * i as u64 + 2))?);
    }
    let mut r = rng(subseed(seed, u64::MAX));
    for k in (1..items.len()).rev() {
        let j = r.random_range(0..=k);
        items.swap(k, j);
    }
    Ok(items)
}
