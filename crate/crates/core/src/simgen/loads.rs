//! Appliance turn-on events sampled at 10 kHz for load identification.

use std::f64::consts::{PI, SQRT_2};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{band_limit, band_limited_noise, rng, subseed, BAND_LIMIT_FRACTION};
use crate::error::{Error, Result};
use crate::signal::{Channel, SampleStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadClass {
    Kettle,
    Lamp,
    Fridge,
    Microwave,
    Laptop,
    Fan,
    Vacuum,
}

impl LoadClass {
    pub const ALL: [LoadClass; 7] = [
        LoadClass::Kettle,
        LoadClass::Lamp,
        LoadClass::Fridge,
        LoadClass::Microwave,
        LoadClass::Laptop,
        LoadClass::Fan,
        LoadClass::Vacuum,
    ];

    pub fn index(self) -> usize {
        LoadClass::ALL.iter().position(|&c| c == self).unwrap()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LoadClass::Kettle => "kettle",
            LoadClass::Lamp => "lamp",
            LoadClass::Fridge => "fridge",
            LoadClass::Microwave => "microwave",
            LoadClass::Laptop => "laptop",
            LoadClass::Fan => "fan",
            LoadClass::Vacuum => "vacuum",
        }
    }

    /// Active power range in watts.
    fn power_range(self) -> (f64, f64) {
        match self {
            LoadClass::Kettle => (2000.0, 3000.0),
            LoadClass::Lamp => (40.0, 100.0),
            LoadClass::Fridge => (100.0, 200.0),
            LoadClass::Microwave => (1000.0, 1400.0),
            LoadClass::Laptop => (40.0, 90.0),
            LoadClass::Fan => (30.0, 70.0),
            LoadClass::Vacuum => (1400.0, 2000.0),
        }
    }

    /// Power factor range; negative values mean leading current.
    fn pf_range(self) -> (f64, f64) {
        match self {
            LoadClass::Kettle | LoadClass::Lamp => (1.0, 1.0),
            LoadClass::Fridge => (0.7, 0.85),
            LoadClass::Microwave => (0.9, 0.96),
            LoadClass::Laptop => (-0.65, -0.5),
            LoadClass::Fan => (0.8, 0.92),
            LoadClass::Vacuum => (0.8, 0.9),
        }
    }

    /// Harmonic current magnitudes relative to the fundamental, orders 3, 5, 7.
    fn harmonics(self) -> [f64; 3] {
        match self {
            LoadClass::Kettle | LoadClass::Lamp => [0.0, 0.0, 0.0],
            LoadClass::Fridge => [0.08, 0.03, 0.01],
            LoadClass::Microwave => [0.25, 0.1, 0.05],
            LoadClass::Laptop => [0.8, 0.6, 0.4],
            LoadClass::Fan => [0.05, 0.02, 0.0],
            LoadClass::Vacuum => [0.12, 0.06, 0.03],
        }
    }
}

impl std::fmt::Display for LoadClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LoadClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LoadClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown load class {s}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadEventSpec {
    pub class: LoadClass,
    pub sample_rate_hz: f64,
    pub f0_hz: f64,
    pub voltage_rms: f64,
    pub duration_s: f64,
    pub event_at_s: f64,
    /// Resistive load already running before the event, in watts.
    pub background_w: f64,
    /// Measurement noise relative to the post-event current.
    pub snr_db: Option<f64>,
    /// Rated power; drawn from the class range when absent.
    pub power_w: Option<f64>,
}

impl LoadEventSpec {
    pub fn new(class: LoadClass) -> Self {
        LoadEventSpec {
            class,
            sample_rate_hz: 10_000.0,
            f0_hz: 50.0,
            voltage_rms: 230.0,
            duration_s: 1.2,
            event_at_s: 0.4,
            background_w: 0.0,
            snr_db: Some(55.0),
            power_w: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadEvent {
    pub class: LoadClass,
    pub voltage: SampleStream,
    pub current: SampleStream,
    pub event_index: usize,
    pub power_w: f64,
    pub reactive_var: f64,
}

/// Generates a turn-on event of `spec.class`.
///
/// The steady-state current is built from the drawn power and power factor
/// against a pure sinusoidal voltage, so the class harmonics add no active
/// power. Each class adds its own start-up behavior: cold-filament surge for
/// lamps, motor inrush for fridges, fans and vacuums, magnetizing inrush for
/// microwaves and a capacitor charging spike for laptop supplies.
pub fn gen_load_event(spec: &LoadEventSpec, seed: u64) -> Result<LoadEvent> {
    let fs = spec.sample_rate_hz;
    let f0 = spec.f0_hz;
    for (name, v) in [
        ("sample rate", fs),
        ("f0", f0),
        ("voltage", spec.voltage_rms),
        ("duration", spec.duration_s),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Parameter(format!("{name} must be positive")));
        }
    }
    if spec.background_w < 0.0 {
        return Err(Error::Parameter("background power must be non-negative".into()));
    }
    let len = (spec.duration_s * fs).round() as usize;
    let at = (spec.event_at_s * fs).round() as usize;
    if at == 0 || at >= len {
        return Err(Error::Boundary {
            index: at,
            margin: 0,
            len,
        });
    }
    let mut r = rng(subseed(seed, 1));
    let class = spec.class;
    let (plo, phi) = class.power_range();
    let power = spec.power_w.unwrap_or_else(|| r.random_range(plo..=phi));
    let (pflo, pfhi) = class.pf_range();
    let pf = if pfhi > pflo {
        r.random_range(pflo..=pfhi)
    } else {
        pflo
    };
    // Angle by which the current lags the voltage.
    let lag = pf.abs().acos() * pf.signum();
    let v_phase = r.random_range(0.0..2.0 * PI);
    let i1 = power / (spec.voltage_rms * pf.abs());
    let reactive = spec.voltage_rms * i1 * lag.sin();
    let mut harm = class.harmonics();
    for h in harm.iter_mut() {
        *h *= r.random_range(0.8..1.2);
    }
    let harm_phase: [f64; 3] = [
        r.random_range(0.0..2.0 * PI),
        r.random_range(0.0..2.0 * PI),
        r.random_range(0.0..2.0 * PI),
    ];

    let w = 2.0 * PI * f0 / fs;
    let voltage: Vec<f64> = (0..len)
        .map(|n| SQRT_2 * spec.voltage_rms * (w * n as f64 + v_phase).sin())
        .collect();
    let steady = |n: usize| {
        let th = w * n as f64 + v_phase;
        let mut i = SQRT_2 * i1 * (th - lag).sin();
        for (k, (&h, &p)) in [3.0, 5.0, 7.0].iter().zip(harm.iter().zip(&harm_phase)) {
            i += SQRT_2 * i1 * h * (k * th + p).sin();
        }
        i
    };
    let background: Vec<f64> = voltage
        .iter()
        .map(|v| v * spec.background_w / (spec.voltage_rms * spec.voltage_rms))
        .collect();

    let peak = SQRT_2 * i1;
    let ramp_len = (1e-3 * fs).round().max(1.0) as usize;
    let ramp = |k: usize| {
        if k >= ramp_len {
            1.0
        } else {
            0.5 - 0.5 * (PI * k as f64 / ramp_len as f64).cos()
        }
    };
    let motor = |r: &mut rand_chacha::ChaCha8Rng, surge: (f64, f64), tau: (f64, f64)| {
        (r.random_range(surge.0..surge.1), r.random_range(tau.0..tau.1))
    };
    let mut load = vec![0.0; len - at];
    match class {
        LoadClass::Kettle => {
            for (k, o) in load.iter_mut().enumerate() {
                *o = ramp(k) * steady(at + k);
            }
        }
        LoadClass::Lamp => {
            let (a, tau) = motor(&mut r, (6.0, 10.0), (0.02, 0.06));
            for (k, o) in load.iter_mut().enumerate() {
                let t = k as f64 / fs;
                *o = ramp(k) * (1.0 + a * (-t / tau).exp()) * steady(at + k);
            }
        }
        LoadClass::Fridge | LoadClass::Fan | LoadClass::Vacuum => {
            let (surge, tau) = match class {
                LoadClass::Fridge => ((3.0, 6.0), (0.1, 0.3)),
                LoadClass::Fan => ((1.5, 3.0), (0.05, 0.15)),
                _ => ((2.0, 4.0), (0.1, 0.3)),
            };
            let (a, tau) = motor(&mut r, surge, tau);
            // Locked-rotor current lags further than the running current.
            let extra_lag = r.random_range(0.3..0.6);
            for (k, o) in load.iter_mut().enumerate() {
                let t = k as f64 / fs;
                let d = (-t / tau).exp();
                let th = w * (at + k) as f64 + v_phase;
                let surge_i = a * d * peak * (th - lag - extra_lag).sin();
                *o = ramp(k) * (steady(at + k) + surge_i);
            }
            if class == LoadClass::Vacuum {
                let brush = band_limited_noise(len - at, fs, 0.04 * i1, subseed(seed, 3));
                let brush = band_limit(&brush, fs, 0.45 * fs);
                let hp = highpass_2k(&brush, fs);
                for (o, b) in load.iter_mut().zip(hp) {
                    *o += b;
                }
            }
        }
        LoadClass::Microwave => {
            let a = r.random_range(3.0..6.0);
            let tau = r.random_range(5.0..10.0) / f0;
            for (k, o) in load.iter_mut().enumerate() {
                let t = k as f64 / fs;
                let th = w * (at + k) as f64 + v_phase;
                let lobe = th.sin().max(0.0).powi(3);
                *o = ramp(k) * (steady(at + k) + a * peak * (-t / tau).exp() * lobe);
            }
        }
        LoadClass::Laptop => {
            // Bulk capacitor charging: a short spike proportional to the
            // instantaneous voltage at switch-on, ringing on the input filter.
            let amp = r.random_range(10.0..30.0) * (voltage[at] / (SQRT_2 * spec.voltage_rms)).abs().max(0.2);
            let tau = r.random_range(0.5e-3..2e-3);
            let ring = r.random_range(1000.0..3000.0);
            for (k, o) in load.iter_mut().enumerate() {
                let t = k as f64 / fs;
                let onset = (k as f64 / 2.0).min(1.0);
                *o = ramp(k) * steady(at + k)
                    + onset * amp * (-t / tau).exp() * (2.0 * PI * ring * t).cos();
            }
        }
    }
    let load = band_limit(&load, fs, BAND_LIMIT_FRACTION * fs);
    let mut current = background;
    for (c, l) in current[at..].iter_mut().zip(load) {
        *c += l;
    }
    if let Some(snr) = spec.snr_db {
        let ref_rms = i1 + spec.background_w / spec.voltage_rms;
        let noise = band_limited_noise(len, fs, ref_rms / 10f64.powf(snr / 20.0), subseed(seed, 2));
        current.iter_mut().zip(noise).for_each(|(c, n)| *c += n);
    }
    Ok(LoadEvent {
        class,
        voltage: SampleStream::new(voltage, fs, Channel::Voltage)?,
        current: SampleStream::new(current, fs, Channel::Current)?,
        event_index: at,
        power_w: power,
        reactive_var: reactive,
    })
}

/// Removes content below 2 kHz.
fn highpass_2k(x: &[f64], fs: f64) -> Vec<f64> {
    let low = band_limit(x, fs, 2000.0);
    x.iter().zip(low).map(|(a, b)| a - b).collect()
}
