//! Switching-transient templates added on top of a base current.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{band_limit, fundamental_phase, rng, BAND_LIMIT_FRACTION};
use crate::error::{Error, Result};
use crate::signal::SampleStream;

/// Kind and shape parameters of a switching transient. Amplitudes are
/// relative to the peak of the base current at the event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransientKind {
    /// Exponentially damped ring.
    CapacitorSwitching {
        ring_hz: f64,
        tau_s: f64,
        amplitude: f64,
    },
    /// Unipolar decaying pulses on one polarity of the fundamental.
    MagnetizingInrush { peak_ratio: f64, decay_cycles: f64 },
    /// Instant change of the base amplitude by `factor`.
    ResistiveStep { factor: f64 },
    /// Symmetric decaying inrush, then a sub-harmonic swing while the
    /// running current settles at `running_ratio` above the base.
    MotorStart {
        inrush_ratio: f64,
        decay_cycles: f64,
        running_ratio: f64,
        subharmonic_hz: f64,
    },
}

impl TransientKind {
    pub fn name(&self) -> &'static str {
        match self {
            TransientKind::CapacitorSwitching { .. } => "capacitor_switching",
            TransientKind::MagnetizingInrush { .. } => "magnetizing_inrush",
            TransientKind::ResistiveStep { .. } => "resistive_step",
            TransientKind::MotorStart { .. } => "motor_start",
        }
    }

    pub fn capacitor_default() -> Self {
        TransientKind::CapacitorSwitching {
            ring_hz: 2000.0,
            tau_s: 0.005,
            amplitude: 1.0,
        }
    }

    pub fn inrush_default() -> Self {
        TransientKind::MagnetizingInrush {
            peak_ratio: 3.0,
            decay_cycles: 10.0,
        }
    }

    pub fn motor_default() -> Self {
        TransientKind::MotorStart {
            inrush_ratio: 5.0,
            decay_cycles: 8.0,
            running_ratio: 0.5,
            subharmonic_hz: 12.5,
        }
    }

    /// Seeded draw from the default parameter ranges of kind `index % 4`.
    pub fn random(index: usize, seed: u64) -> Self {
        let mut r = rng(seed);
        match index % 4 {
            0 => TransientKind::CapacitorSwitching {
                ring_hz: r.random_range(1000.0..3000.0),
                tau_s: r.random_range(0.002..0.010),
                amplitude: r.random_range(0.5..2.0),
            },
            1 => TransientKind::MagnetizingInrush {
                peak_ratio: r.random_range(2.0..6.0),
                decay_cycles: r.random_range(5.0..20.0),
            },
            2 => {
                let up = r.random_bool(0.5);
                TransientKind::ResistiveStep {
                    factor: if up {
                        r.random_range(1.4..3.0)
                    } else {
                        r.random_range(0.3..0.7)
                    },
                }
            }
            _ => TransientKind::MotorStart {
                inrush_ratio: r.random_range(3.0..7.0),
                decay_cycles: r.random_range(5.0..15.0),
                running_ratio: r.random_range(0.3..1.0),
                subharmonic_hz: r.random_range(8.0..20.0),
            },
        }
    }

    fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        let ok = match *self {
            TransientKind::CapacitorSwitching {
                ring_hz,
                tau_s,
                amplitude,
            } => {
                if ring_hz >= BAND_LIMIT_FRACTION * sample_rate_hz {
                    return Err(Error::Parameter(format!(
                        "ring frequency {ring_hz} Hz above the band limit"
                    )));
                }
                ring_hz > 0.0 && tau_s > 0.0 && amplitude >= 0.0
            }
            TransientKind::MagnetizingInrush {
                peak_ratio,
                decay_cycles,
            } => peak_ratio >= 0.0 && decay_cycles > 0.0,
            TransientKind::ResistiveStep { factor } => factor >= 0.0,
            TransientKind::MotorStart {
                inrush_ratio,
                decay_cycles,
                running_ratio,
                subharmonic_hz,
            } => {
                inrush_ratio >= 0.0
                    && decay_cycles > 0.0
                    && running_ratio >= 0.0
                    && subharmonic_hz > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid {} parameters", self.name())))
        }
    }
}

/// Raised-cosine ramp from 0 to 1 over `len` samples.
fn ramp(k: usize, len: usize) -> f64 {
    if k >= len {
        1.0
    } else {
        0.5 - 0.5 * (PI * k as f64 / len as f64).cos()
    }
}

/// Adds a transient of `kind` starting at `at_sample` to `base`.
///
/// `f0_hz` is the fundamental of the base current. Templates with finite
/// support are band-limited before they are added; the resistive step uses a
/// 1 ms raised-cosine envelope instead of a hard edge.
pub fn gen_transient(
    kind: &TransientKind,
    at_sample: usize,
    base: &SampleStream,
    f0_hz: f64,
    seed: u64,
) -> Result<SampleStream> {
    if at_sample >= base.len() {
        return Err(Error::Boundary {
            index: at_sample,
            margin: 0,
            len: base.len(),
        });
    }
    let fs = base.sample_rate_hz();
    kind.validate(fs)?;
    let x = base.samples();
    let mut r = rng(seed);

    // Reference amplitude and phase of the base fundamental.
    let cycle = (fs / f0_hz).round() as usize;
    let lo = at_sample.saturating_sub(cycle);
    let ref_span = if at_sample - lo >= cycle / 2 {
        &x[lo..at_sample]
    } else {
        &x[at_sample..(at_sample + cycle).min(x.len())]
    };
    let ref_start = if at_sample - lo >= cycle / 2 { lo } else { at_sample };
    let (phase0, amp) = fundamental_phase(ref_span, f0_hz, fs);
    let amp = if amp > 0.0 { amp } else { 1.0 };
    let fundamental = |n: usize| {
        amp * (2.0 * PI * f0_hz * (n as f64 - ref_start as f64) / fs + phase0).sin()
    };

    let mut out = x.to_vec();
    let onset = (2e-4 * fs).round().max(1.0) as usize;
    match *kind {
        TransientKind::ResistiveStep { factor } => {
            let ramp_len = (1e-3 * fs).round().max(1.0) as usize;
            for (k, o) in out[at_sample..].iter_mut().enumerate() {
                *o *= 1.0 + (factor - 1.0) * ramp(k, ramp_len);
            }
        }
        TransientKind::CapacitorSwitching {
            ring_hz,
            tau_s,
            amplitude,
        } => {
            let len = ((8.0 * tau_s * fs) as usize).min(x.len() - at_sample);
            let phase = r.random_range(0.0..2.0 * PI);
            let template: Vec<f64> = (0..len)
                .map(|k| {
                    let t = k as f64 / fs;
                    amplitude
                        * amp
                        * ramp(k, onset)
                        * (-t / tau_s).exp()
                        * (2.0 * PI * ring_hz * t + phase).sin()
                })
                .collect();
            add_limited(&mut out[at_sample..], &template, fs);
        }
        TransientKind::MagnetizingInrush {
            peak_ratio,
            decay_cycles,
        } => {
            let tau = decay_cycles / f0_hz;
            let len = ((5.0 * tau * fs) as usize).min(x.len() - at_sample);
            let template: Vec<f64> = (0..len)
                .map(|k| {
                    let n = at_sample + k;
                    let t = k as f64 / fs;
                    let s = fundamental(n) / amp;
                    // Flat-topped unipolar lobes riding the positive half cycles.
                    peak_ratio * amp * ramp(k, onset) * (-t / tau).exp() * s.max(0.0).powi(3)
                })
                .collect();
            add_limited(&mut out[at_sample..], &template, fs);
        }
        TransientKind::MotorStart {
            inrush_ratio,
            decay_cycles,
            running_ratio,
            subharmonic_hz,
        } => {
            let tau = decay_cycles / f0_hz;
            let len = x.len() - at_sample;
            let ramp_len = (1e-3 * fs).round().max(1.0) as usize;
            let lag = PI / 3.0;
            let template: Vec<f64> = (0..len)
                .map(|k| {
                    let n = at_sample + k;
                    let t = k as f64 / fs;
                    let decay = (-t / tau).exp();
                    let swing = 1.0 + 0.3 * decay * (2.0 * PI * subharmonic_hz * t).sin();
                    let envelope = running_ratio + inrush_ratio * decay;
                    let shifted = amp
                        * (2.0 * PI * f0_hz * (n as f64 - ref_start as f64) / fs + phase0 - lag)
                            .sin();
                    ramp(k, ramp_len) * envelope * swing * shifted
                })
                .collect();
            for (o, t) in out[at_sample..].iter_mut().zip(template) {
                *o += t;
            }
        }
    }
    base.with_samples(out)
}

fn add_limited(out: &mut [f64], template: &[f64], fs: f64) {
    let limited = band_limit(template, fs, BAND_LIMIT_FRACTION * fs);
    for (o, t) in out.iter_mut().zip(limited) {
        *o += t;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hif_features::{default_band_plan, band_mean_energies};
    use crate::signal::{fft, hann_window, rms_of, Channel, Frame};
    use crate::simgen::sinusoid;

    const FS: f64 = 20_000.0;

    fn base() -> SampleStream {
        SampleStream::new(sinusoid(20_000, 10.0, 50.0, FS, 0.4), FS, Channel::Current).unwrap()
    }

    #[test]
    fn resistive_step_doubles_rms() {
        let out = gen_transient(
            &TransientKind::ResistiveStep { factor: 2.0 },
            10_000,
            &base(),
            50.0,
            1,
        )
        .unwrap();
        let pre = rms_of(&out.samples()[2000..10_000]).unwrap();
        let post = rms_of(&out.samples()[10_400..18_400]).unwrap();
        assert!((post / pre - 2.0).abs() / 2.0 < 0.02);
    }

    #[test]
    fn capacitor_ring_shows_in_its_band() {
        let at = 10_000;
        let out = gen_transient(&TransientKind::capacitor_default(), at, &base(), 50.0, 2).unwrap();
        let plan = default_band_plan(FS).unwrap();
        let w = hann_window(512).unwrap();
        let energy = |start: usize| {
            let f = Frame::new(out.samples()[start..start + 512].to_vec(), start, FS).unwrap();
            band_mean_energies(&fft(&f, Some(&w)).unwrap(), &plan).unwrap()
        };
        // 2 kHz falls in band 6 (1.25-2.5 kHz).
        let before = energy(at - 1024);
        let during = energy(at);
        assert!(during[5] > 1e3 * before[5], "{} vs {}", during[5], before[5]);
    }

    #[test]
    fn inrush_is_asymmetric() {
        let at = 10_000;
        let out = gen_transient(&TransientKind::inrush_default(), at, &base(), 50.0, 3).unwrap();
        let first = &out.samples()[at..at + 400];
        let pos = first.iter().cloned().fold(f64::MIN, f64::max);
        let neg = -first.iter().cloned().fold(f64::MAX, f64::min);
        assert!(pos / neg > 1.5, "{pos} / {neg}");
    }

    #[test]
    fn motor_start_settles_above_base() {
        let at = 4000;
        let out = gen_transient(&TransientKind::motor_default(), at, &base(), 50.0, 4).unwrap();
        let early = rms_of(&out.samples()[at..at + 400]).unwrap();
        let late = rms_of(&out.samples()[19_200..20_000]).unwrap();
        let pre = rms_of(&out.samples()[..at]).unwrap();
        assert!(early > 2.0 * late);
        assert!(late > pre);
    }

    #[test]
    fn rejects_out_of_range_event_and_ring() {
        assert!(gen_transient(&TransientKind::capacitor_default(), 20_000, &base(), 50.0, 0).is_err());
        let bad = TransientKind::CapacitorSwitching {
            ring_hz: 9500.0,
            tau_s: 0.004,
            amplitude: 1.0,
        };
        assert!(gen_transient(&bad, 100, &base(), 50.0, 0).is_err());
    }

    #[test]
    fn deterministic() {
        for i in 0..4 {
            let kind = TransientKind::random(i, 5);
            let a = gen_transient(&kind, 5000, &base(), 50.0, 11).unwrap();
            let b = gen_transient(&kind, 5000, &base(), 50.0, 11).unwrap();
            assert_eq!(a, b);
        }
    }
}
