//! Harmonic phasors, active and reactive power, steady-state power deltas
//! and the nine-dimensional load-identification vector.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hif_features::{band_energies, default_band_plan};
use crate::signal::{fft, hann_window, remove_dc, Frame, SampleStream};

pub const LOAD_RATE_HZ: f64 = 10_000.0;
pub const LOAD_BANDS: usize = 7;
pub const LOAD_FEATURES: usize = LOAD_BANDS + 2;
pub const TRANSIENT_LEN: usize = 1024;
/// Harmonic orders summed for P and Q.
pub const POWER_ORDERS: usize = 13;
pub const STEADY_CYCLES: usize = 5;
pub const SETTLING_CYCLES: usize = 10;

/// Voltage and current at one harmonic order. `phi` is the voltage angle
/// minus the current angle, so lagging current gives a positive `phi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phasor {
    pub order: usize,
    pub v_rms: f64,
    pub i_rms: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerReading {
    pub p: f64,
    pub q: f64,
}

/// DFT coefficient at bin `m`, summed directly.
fn dft_bin(x: &[f64], m: usize) -> Complex64 {
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(k, &v)| Complex64::from_polar(v, -2.0 * PI * m as f64 * k as f64 / n))
        .sum()
}

fn wrap_angle(a: f64) -> f64 {
    let mut w = a % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Phasors for orders `1..=max_order` from the spectra at bin
/// `round(k f0 / df)`. Orders at or above Nyquist are skipped.
pub fn phasors(v: &Frame, i: &Frame, f0_hz: f64, max_order: usize) -> Result<Vec<Phasor>> {
    if v.len() != i.len() || v.sample_rate_hz() != i.sample_rate_hz() || v.start_index() != i.start_index() {
        return Err(Error::Alignment("voltage and current frames differ".into()));
    }
    if v.is_empty() {
        return Err(Error::InvalidSize("empty frame".into()));
    }
    let n = v.len();
    let df = v.sample_rate_hz() / n as f64;
    let cycles = f0_hz / df;
    if cycles.round() < 1.0 {
        return Err(Error::Parameter(format!(
            "f0 {f0_hz} Hz falls in the DC bin at {df} Hz resolution"
        )));
    }
    if (cycles - cycles.round()).abs() > 1e-6 {
        return Err(Error::Alignment(format!(
            "frame spans {cycles:.4} cycles, not a whole number"
        )));
    }
    let scale = std::f64::consts::SQRT_2 / n as f64;
    let mut out = Vec::new();
    for k in 1..=max_order {
        let m = (k as f64 * cycles).round() as usize;
        if 2 * m >= n {
            break;
        }
        let vk = dft_bin(v.values(), m);
        let ik = dft_bin(i.values(), m);
        out.push(Phasor {
            order: k,
            v_rms: vk.norm() * scale,
            i_rms: ik.norm() * scale,
            phi: wrap_angle(vk.arg() - ik.arg()),
        });
    }
    Ok(out)
}

/// `P = sum V I cos(phi)`, `Q = sum V I sin(phi)`.
pub fn active_reactive(phasors: &[Phasor]) -> PowerReading {
    phasors.iter().fold(PowerReading { p: 0.0, q: 0.0 }, |acc, ph| {
        let s = ph.v_rms * ph.i_rms;
        PowerReading {
            p: acc.p + s * ph.phi.cos(),
            q: acc.q + s * ph.phi.sin(),
        }
    })
}

pub fn delta_pq(before: PowerReading, after: PowerReading) -> (f64, f64) {
    (after.p - before.p, after.q - before.q)
}

/// Sample ranges of the steady windows flanking an event: the last five
/// whole cycles before it, and five cycles starting ten cycles after it.
pub fn steady_windows(
    event_index: usize,
    len: usize,
    sample_rate_hz: f64,
    f0_hz: f64,
) -> Result<((usize, usize), (usize, usize))> {
    let cycle = sample_rate_hz / f0_hz;
    let span = (STEADY_CYCLES as f64 * cycle).round() as usize;
    let settle = (SETTLING_CYCLES as f64 * cycle).round() as usize;
    if event_index < span || event_index + settle + span > len {
        return Err(Error::Boundary {
            index: event_index,
            margin: settle + span,
            len,
        });
    }
    Ok((
        (event_index - span, event_index),
        (event_index + settle, event_index + settle + span),
    ))
}

/// Readings before and after the event at `event_index`.
pub fn power_around(
    voltage: &SampleStream,
    current: &SampleStream,
    event_index: usize,
    f0_hz: f64,
) -> Result<(PowerReading, PowerReading)> {
    if voltage.len() != current.len() || voltage.sample_rate_hz() != current.sample_rate_hz() {
        return Err(Error::Alignment("voltage and current streams differ".into()));
    }
    let fs = voltage.sample_rate_hz();
    let (a, b) = steady_windows(event_index, voltage.len(), fs, f0_hz)?;
    let reading = |(s, e): (usize, usize)| -> Result<PowerReading> {
        let v = voltage.frame(s, e - s)?;
        let i = current.frame(s, e - s)?;
        Ok(active_reactive(&phasors(&v, &i, f0_hz, POWER_ORDERS)?))
    };
    Ok((reading(a)?, reading(b)?))
}

/// `[E1..E7, dP, dQ]` with E1 the highest octave band (2.5-5 kHz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadFeatureVector(pub [f64; LOAD_FEATURES]);

impl LoadFeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn energies(&self) -> &[f64] {
        &self.0[..LOAD_BANDS]
    }

    pub fn delta_p(&self) -> f64 {
        self.0[LOAD_BANDS]
    }

    pub fn delta_q(&self) -> f64 {
        self.0[LOAD_BANDS + 1]
    }
}

/// Band log-energies of a 1024-sample transient at 10 kHz, highest band
/// first, followed by the power deltas.
pub fn load_feature_vector(transient: &Frame, delta_p: f64, delta_q: f64) -> Result<LoadFeatureVector> {
    if transient.len() != TRANSIENT_LEN {
        return Err(Error::Shape(format!(
            "transient has {} samples, expected {TRANSIENT_LEN}",
            transient.len()
        )));
    }
    if transient.sample_rate_hz() != LOAD_RATE_HZ {
        return Err(Error::Shape(format!(
            "transient sampled at {} Hz, expected {LOAD_RATE_HZ}",
            transient.sample_rate_hz()
        )));
    }
    let window = hann_window(TRANSIENT_LEN)?;
    let spectrum = fft(&remove_dc(transient)?, Some(&window))?;
    let energies = band_energies(&spectrum, &default_band_plan(LOAD_RATE_HZ)?)?;
    let mut out = [0.0; LOAD_FEATURES];
    for (o, e) in out.iter_mut().zip(energies.values().iter().rev()) {
        *o = *e;
    }
    out[LOAD_BANDS] = delta_p;
    out[LOAD_BANDS + 1] = delta_q;
    Ok(LoadFeatureVector(out))
}

/// Table-order band edges: `(upper, lower)` for E1..E7.
pub fn load_band_edges() -> Result<Vec<(f64, f64)>> {
    let plan = default_band_plan(LOAD_RATE_HZ)?;
    let e = plan.edges();
    Ok((0..LOAD_BANDS).rev().map(|b| (e[b + 1], e[b])).collect())
}

/// Feature vector of an event at `event_index`: the transient centred on
/// it and the steady-state power change across it.
pub fn event_features(
    voltage: &SampleStream,
    current: &SampleStream,
    event_index: usize,
    f0_hz: f64,
) -> Result<LoadFeatureVector> {
    let (before, after) = power_around(voltage, current, event_index, f0_hz)?;
    let (dp, dq) = delta_pq(before, after);
    let transient = crate::events::extract_transient(current, event_index)?;
    load_feature_vector(&transient, dp, dq)
}
