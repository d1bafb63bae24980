//! Power-quality monitoring: per-frame electrical parameters and the RMS
//! threshold state machine for swells, dips, interruptions and rapid
//! voltage changes.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{rms_of, Frame, SampleStream};

pub const HARMONIC_ORDERS: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PqThresholds {
    pub swell_lo: f64,
    pub swell_hi: f64,
    pub dip_lo: f64,
    pub dip_hi: f64,
    pub interruption: f64,
    /// Largest allowed change of the RMS fraction per second inside the
    /// normal band.
    pub rapid_change_rate: f64,
}

impl Default for PqThresholds {
    fn default() -> Self {
        PqThresholds {
            swell_lo: 1.10,
            swell_hi: 1.80,
            dip_lo: 0.10,
            dip_hi: 0.90,
            interruption: 0.10,
            rapid_change_rate: 0.05,
        }
    }
}

impl PqThresholds {
    pub fn validate(&self) -> Result<()> {
        let ok = self.interruption >= 0.0
            && self.interruption <= self.dip_lo
            && self.dip_lo <= self.dip_hi
            && self.dip_hi < 1.0
            && 1.0 < self.swell_lo
            && self.swell_lo < self.swell_hi
            && self.rapid_change_rate > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("inconsistent PQ thresholds {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectricalParams {
    pub rms_voltage: f64,
    pub rms_current: f64,
    pub frequency_hz: f64,
    pub power_factor: f64,
    /// RMS magnitude of current harmonics, orders 1..=13.
    pub harmonic_magnitudes: Vec<f64>,
}

/// Amplitude of the `f_hz` component of `x` from a least-squares fit of
/// sine, cosine and offset. Returns (explained energy, peak amplitude).
fn tone_fit(x: &[f64], f_hz: f64, fs: f64) -> (f64, f64) {
    let n = x.len();
    let w = 2.0 * PI * f_hz / fs;
    // Normal equations for [sin, cos, 1].
    let mut g = [[0.0f64; 3]; 3];
    let mut b = [0.0f64; 3];
    for (k, &v) in x.iter().enumerate() {
        let basis = [(w * k as f64).sin(), (w * k as f64).cos(), 1.0];
        for i in 0..3 {
            b[i] += basis[i] * v;
            for j in 0..3 {
                g[i][j] += basis[i] * basis[j];
            }
        }
    }
    let Some(c) = solve3(g, b) else {
        return (0.0, 0.0);
    };
    let explained = c[0] * b[0] + c[1] * b[1] + c[2] * b[2];
    (explained - b[2] * b[2] / n as f64, (c[0] * c[0] + c[1] * c[1]).sqrt())
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Fundamental frequency near `nominal_hz`.
///
/// Scans a 0.25 Hz grid over ±20% of nominal for the tone whose sine fit
/// explains the most energy, then refines the best grid point by parabolic
/// interpolation and a short golden-section search.
pub fn estimate_frequency(x: &[f64], fs: f64, nominal_hz: f64) -> f64 {
    let step = 0.25;
    let lo = nominal_hz * 0.8;
    let count = ((nominal_hz * 0.4) / step).round() as usize;
    let score = |f: f64| tone_fit(x, f, fs).0;
    let grid: Vec<f64> = (0..=count).map(|k| score(lo + k as f64 * step)).collect();
    let best = (0..grid.len())
        .max_by(|&a, &b| grid[a].total_cmp(&grid[b]))
        .unwrap_or(0);
    let mut f = lo + best as f64 * step;
    if best > 0 && best + 1 < grid.len() {
        let (a, b, c) = (grid[best - 1], grid[best], grid[best + 1]);
        let den = a - 2.0 * b + c;
        if den.abs() > 0.0 {
            f += step * 0.5 * (a - c) / den;
        }
    }
    let (mut a, mut b) = (f - step, f + step);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..40 {
        let c = b - ratio * (b - a);
        let d = a + ratio * (b - a);
        if score(c) > score(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

/// RMS, frequency, power factor and harmonic content of aligned voltage
/// and current frames.
///
/// Power, RMS values and power factor are taken over the largest whole
/// number of fundamental cycles in the frame, or the whole frame when it
/// holds less than one cycle.
pub fn compute_params(v: &Frame, i: &Frame, nominal_hz: f64) -> Result<ElectricalParams> {
    if v.len() != i.len()
        || v.start_index() != i.start_index()
        || v.sample_rate_hz() != i.sample_rate_hz()
    {
        return Err(Error::Alignment(format!(
            "voltage frame ({} @ {}) and current frame ({} @ {}) differ",
            v.len(),
            v.start_index(),
            i.len(),
            i.start_index()
        )));
    }
    if v.len() < 8 {
        return Err(Error::InvalidSize(format!("frame of {} samples", v.len())));
    }
    let fs = v.sample_rate_hz();
    let f0 = estimate_frequency(v.values(), fs, nominal_hz);
    let period = fs / f0;
    let cycles = (v.len() as f64 / period).floor();
    let span = if cycles >= 1.0 {
        ((cycles * period).round() as usize).min(v.len())
    } else {
        v.len()
    };
    let vs = &v.values()[..span];
    let is = &i.values()[..span];
    let rms_voltage = rms_of(vs).unwrap_or(0.0);
    let rms_current = rms_of(is).unwrap_or(0.0);
    let p = vs.iter().zip(is).map(|(a, b)| a * b).sum::<f64>() / span as f64;
    let power_factor = if rms_voltage > 0.0 && rms_current > 0.0 {
        (p / (rms_voltage * rms_current)).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let harmonic_magnitudes = (1..=HARMONIC_ORDERS)
        .map(|k| {
            let fk = k as f64 * f0;
            if fk >= fs / 2.0 {
                0.0
            } else {
                tone_fit(i.values(), fk, fs).1 / std::f64::consts::SQRT_2
            }
        })
        .collect();
    Ok(ElectricalParams {
        rms_voltage,
        rms_current,
        frequency_hz: f0,
        power_factor,
        harmonic_magnitudes,
    })
}

/// One-cycle RMS refreshed every half cycle, as a fraction of
/// `nominal_rms`. Each value is indexed by the sample just past its window.
pub fn rms_series(stream: &SampleStream, nominal_rms: f64, f0_hz: f64) -> Result<Vec<(usize, f64)>> {
    if !(nominal_rms > 0.0 && f0_hz > 0.0) {
        return Err(Error::Parameter("nominal RMS and frequency must be positive".into()));
    }
    let fs = stream.sample_rate_hz();
    let cycle = (fs / f0_hz).round() as usize;
    let half = (cycle / 2).max(1);
    if cycle == 0 || stream.len() < cycle {
        return Err(Error::Length {
            needed: cycle.max(1),
            available: stream.len(),
        });
    }
    let x = stream.samples();
    Ok((cycle..=x.len())
        .step_by(half)
        .map(|end| (end, rms_of(&x[end - cycle..end]).unwrap_or(0.0) / nominal_rms))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmsClass {
    Normal,
    Swell,
    /// Above the upper swell limit.
    OutOfBand,
    Dip,
    Interruption,
}

/// Partitions `[0, inf)`: interruption below `interruption`, dip up to and
/// including `dip_hi`, swell from `swell_lo` up to and including
/// `swell_hi`, out-of-band above that, normal in between.
pub fn classify_rms(fraction: f64, t: &PqThresholds) -> RmsClass {
    if fraction < t.interruption {
        RmsClass::Interruption
    } else if fraction <= t.dip_hi {
        RmsClass::Dip
    } else if fraction < t.swell_lo {
        RmsClass::Normal
    } else if fraction <= t.swell_hi {
        RmsClass::Swell
    } else {
        RmsClass::OutOfBand
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PqEventKind {
    Swell,
    Dip,
    Interruption,
    RapidChange,
}

impl PqEventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PqEventKind::Swell => "swell",
            PqEventKind::Dip => "dip",
            PqEventKind::Interruption => "interruption",
            PqEventKind::RapidChange => "rapid_change",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PqEvent {
    /// Sequential id in order of opening.
    pub id: u64,
    pub kind: PqEventKind,
    pub start_index: usize,
    /// Index of the first value past the event.
    pub end_index: usize,
    /// Largest fraction for swells, smallest for dips and interruptions,
    /// largest step for rapid changes.
    pub extremum: f64,
    pub timestamp_s: f64,
    /// Enclosing dip of an interruption.
    pub parent: Option<u64>,
    /// Swell that went above the upper swell limit.
    pub out_of_band: bool,
    /// Still open when the series ended.
    pub truncated: bool,
}

#[derive(Debug, Clone)]
struct Open {
    id: u64,
    start: usize,
    extremum: f64,
    out_of_band: bool,
}

/// Single-pass event state machine over an RMS series.
///
/// A swell opens at the first value at or above `swell_lo` and ends at the
/// first value below it. A dip opens at or below `dip_hi` and ends above it.
/// An interruption opens below `interruption`, ends at or above it, and is
/// always nested inside a dip. A rapid change covers consecutive steps
/// inside the normal band that move faster than `rapid_change_rate`.
#[derive(Debug, Clone)]
pub struct PqTracker {
    thresholds: PqThresholds,
    sample_rate_hz: f64,
    next_id: u64,
    last: Option<(usize, f64)>,
    swell: Option<Open>,
    dip: Option<Open>,
    interruption: Option<Open>,
    rapid: Option<Open>,
}

impl PqTracker {
    pub fn new(thresholds: PqThresholds, sample_rate_hz: f64) -> Result<Self> {
        thresholds.validate()?;
        if !(sample_rate_hz > 0.0) {
            return Err(Error::InvalidRate(sample_rate_hz));
        }
        Ok(PqTracker {
            thresholds,
            sample_rate_hz,
            next_id: 0,
            last: None,
            swell: None,
            dip: None,
            interruption: None,
            rapid: None,
        })
    }

    fn open(&mut self, start: usize, extremum: f64) -> Open {
        let id = self.next_id;
        self.next_id += 1;
        Open {
            id,
            start,
            extremum,
            out_of_band: false,
        }
    }

    fn close(&self, o: Open, kind: PqEventKind, end: usize, parent: Option<u64>, truncated: bool) -> PqEvent {
        PqEvent {
            id: o.id,
            kind,
            start_index: o.start,
            end_index: end,
            extremum: o.extremum,
            timestamp_s: o.start as f64 / self.sample_rate_hz,
            parent,
            out_of_band: o.out_of_band,
            truncated,
        }
    }

    /// Feeds one RMS value; returns the events it closes.
    pub fn push(&mut self, index: usize, fraction: f64) -> Result<Vec<PqEvent>> {
        if let Some((prev, _)) = self.last {
            if index <= prev {
                return Err(Error::Ordering(index));
            }
        }
        if !fraction.is_finite() || fraction < 0.0 {
            return Err(Error::Parameter(format!("RMS fraction {fraction} at {index}")));
        }
        let t = self.thresholds;
        let class = classify_rms(fraction, &t);
        let mut closed = Vec::new();

        // Closing conditions first so a value can end one event and open
        // another.
        if self.interruption.is_some() && fraction >= t.interruption {
            let o = self.interruption.take().unwrap();
            let parent = self.dip.as_ref().map(|d| d.id);
            closed.push(self.close(o, PqEventKind::Interruption, index, parent, false));
        }
        if self.dip.is_some() && fraction > t.dip_hi {
            let o = self.dip.take().unwrap();
            closed.push(self.close(o, PqEventKind::Dip, index, None, false));
        }
        if self.swell.is_some() && fraction < t.swell_lo {
            let o = self.swell.take().unwrap();
            closed.push(self.close(o, PqEventKind::Swell, index, None, false));
        }

        // Rapid change: steps between consecutive values inside the normal
        // band.
        let step = self.last.map(|(pi, pf)| {
            let dt = (index - pi) as f64 / self.sample_rate_hz;
            (pi, pf, (fraction - pf).abs(), dt)
        });
        let prev_normal = self
            .last
            .is_some_and(|(_, pf)| classify_rms(pf, &t) == RmsClass::Normal);
        let fast = match step {
            Some((_, _, d, dt)) => {
                class == RmsClass::Normal && prev_normal && d > t.rapid_change_rate * dt
            }
            None => false,
        };
        if fast {
            let (pi, _, d, _) = step.unwrap();
            match self.rapid.as_mut() {
                Some(o) => o.extremum = o.extremum.max(d),
                None => self.rapid = Some(self.open(pi, d)),
            }
        } else if let Some(o) = self.rapid.take() {
            let end = index;
            closed.push(self.close(o, PqEventKind::RapidChange, end, None, false));
        }

        match class {
            RmsClass::Swell | RmsClass::OutOfBand => match self.swell.as_mut() {
                Some(o) => o.extremum = o.extremum.max(fraction),
                None => self.swell = Some(self.open(index, fraction)),
            },
            RmsClass::Dip | RmsClass::Interruption => {
                match self.dip.as_mut() {
                    Some(o) => o.extremum = o.extremum.min(fraction),
                    None => self.dip = Some(self.open(index, fraction)),
                }
                if class == RmsClass::Interruption {
                    match self.interruption.as_mut() {
                        Some(o) => o.extremum = o.extremum.min(fraction),
                        None => self.interruption = Some(self.open(index, fraction)),
                    }
                }
            }
            RmsClass::Normal => {}
        }
        if class == RmsClass::OutOfBand {
            if let Some(o) = self.swell.as_mut() {
                o.out_of_band = true;
            }
        }
        self.last = Some((index, fraction));
        Ok(closed)
    }

    /// Closes every open event at the end of the series.
    pub fn finish(&mut self) -> Vec<PqEvent> {
        let end = self.last.map(|(i, _)| i + 1).unwrap_or(0);
        let mut out = Vec::new();
        if let Some(o) = self.interruption.take() {
            let parent = self.dip.as_ref().map(|d| d.id);
            out.push(self.close(o, PqEventKind::Interruption, end, parent, true));
        }
        if let Some(o) = self.dip.take() {
            out.push(self.close(o, PqEventKind::Dip, end, None, true));
        }
        if let Some(o) = self.swell.take() {
            out.push(self.close(o, PqEventKind::Swell, end, None, true));
        }
        if let Some(o) = self.rapid.take() {
            out.push(self.close(o, PqEventKind::RapidChange, end, None, true));
        }
        out
    }
}

/// Runs a fresh [`PqTracker`] over `series`. Events come out in closing
/// order.
pub fn track_events(
    series: &[(usize, f64)],
    thresholds: &PqThresholds,
    sample_rate_hz: f64,
) -> Result<Vec<PqEvent>> {
    let mut tracker = PqTracker::new(*thresholds, sample_rate_hz)?;
    let mut out = Vec::new();
    for &(i, f) in series {
        out.extend(tracker.push(i, f)?);
    }
    out.extend(tracker.finish());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::sinusoid;
    use proptest::prelude::*;

    const FS: f64 = 20_000.0;

    fn frame(x: Vec<f64>) -> Frame {
        Frame::new(x, 0, FS).unwrap()
    }

    #[test]
    fn in_phase_and_lagging_power_factor() {
        let v = frame(sinusoid(512, 230.0, 50.0, FS, 0.0));
        let i = frame(sinusoid(512, 10.0, 50.0, FS, 0.0));
        let p = compute_params(&v, &i, 50.0).unwrap();
        assert!((p.power_factor - 1.0).abs() < 1e-3);
        assert!((p.frequency_hz - 50.0).abs() < 0.05, "{}", p.frequency_hz);
        assert!((p.rms_voltage - 230.0).abs() < 1e-6);
        assert!((p.harmonic_magnitudes[0] - 10.0).abs() < 1e-6);

        let lag = frame(sinusoid(512, 10.0, 50.0, FS, -PI / 3.0));
        let p = compute_params(&v, &lag, 50.0).unwrap();
        assert!((p.power_factor - 0.5).abs() < 1e-3, "{}", p.power_factor);
    }

    #[test]
    fn frequency_sweep() {
        let mut f = 45.0;
        while f <= 55.0 {
            let v = sinusoid(512, 230.0, f, FS, 0.7);
            let est = estimate_frequency(&v, FS, 50.0);
            assert!((est - f).abs() < 0.5, "{f}: {est}");
            f += 0.5;
        }
        let v = frame(sinusoid(512, 230.0, 49.5, FS, 0.2));
        let p = compute_params(&v, &v, 50.0).unwrap();
        assert!((p.frequency_hz - 49.5).abs() < 0.5);
    }

    #[test]
    fn harmonic_magnitudes() {
        let mut i = sinusoid(2000, 10.0, 50.0, FS, 0.0);
        let h3 = sinusoid(2000, 1.5, 150.0, FS, 0.4);
        i.iter_mut().zip(h3).for_each(|(a, b)| *a += b);
        let v = frame(sinusoid(2000, 230.0, 50.0, FS, 0.0));
        let p = compute_params(&v, &frame(i), 50.0).unwrap();
        assert_eq!(p.harmonic_magnitudes.len(), 13);
        assert!((p.harmonic_magnitudes[2] - 1.5).abs() < 1e-3);
        assert!(p.harmonic_magnitudes[1] < 1e-3);
    }

    #[test]
    fn misaligned_frames() {
        let v = frame(vec![1.0; 64]);
        let i = Frame::new(vec![1.0; 64], 3, FS).unwrap();
        assert!(matches!(compute_params(&v, &i, 50.0), Err(Error::Alignment(_))));
    }

    #[test]
    fn classification() {
        let t = PqThresholds::default();
        assert_eq!(classify_rms(1.2, &t), RmsClass::Swell);
        assert_eq!(classify_rms(0.5, &t), RmsClass::Dip);
        assert_eq!(classify_rms(0.05, &t), RmsClass::Interruption);
        assert_eq!(classify_rms(1.0, &t), RmsClass::Normal);
        assert_eq!(classify_rms(1.10, &t), RmsClass::Swell);
        assert_eq!(classify_rms(0.90, &t), RmsClass::Dip);
        assert_eq!(classify_rms(0.10, &t), RmsClass::Dip);
        assert_eq!(classify_rms(1.9, &t), RmsClass::OutOfBand);
    }

    fn series(v: &[f64]) -> Vec<(usize, f64)> {
        v.iter().enumerate().map(|(i, &f)| (i * 100, f)).collect()
    }

    #[test]
    fn single_swell() {
        let ev = track_events(&series(&[1.0, 1.2, 1.2, 1.0]), &PqThresholds::default(), FS).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, PqEventKind::Swell);
        assert_eq!((ev[0].start_index, ev[0].end_index), (100, 300));
        assert_eq!(ev[0].extremum, 1.2);
    }

    #[test]
    fn quiet_series() {
        assert!(track_events(&series(&[1.0; 20]), &PqThresholds::default(), FS).unwrap().is_empty());
    }

    #[test]
    fn nested_interruption() {
        let ev = track_events(&series(&[1.0, 0.5, 0.05, 0.5, 1.0]), &PqThresholds::default(), FS)
            .unwrap();
        assert_eq!(ev.len(), 2);
        let int = &ev[0];
        let dip = &ev[1];
        assert_eq!(int.kind, PqEventKind::Interruption);
        assert_eq!((int.start_index, int.end_index), (200, 300));
        assert_eq!(dip.kind, PqEventKind::Dip);
        assert_eq!((dip.start_index, dip.end_index), (100, 400));
        assert_eq!(dip.extremum, 0.05);
        assert_eq!(int.parent, Some(dip.id));
    }

    #[test]
    fn rejects_non_monotone_indices() {
        let s = vec![(10, 1.0), (10, 1.0)];
        assert!(matches!(
            track_events(&s, &PqThresholds::default(), FS),
            Err(Error::Ordering(10))
        ));
    }

    #[test]
    fn rms_series_of_a_dip() {
        let mut x = sinusoid(8000, 230.0, 50.0, FS, 0.0);
        for v in &mut x[4000..6000] {
            *v *= 0.5;
        }
        let s = SampleStream::new(x, FS, crate::signal::Channel::Voltage).unwrap();
        let r = rms_series(&s, 230.0, 50.0).unwrap();
        let ev = track_events(&r, &PqThresholds::default(), FS).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, PqEventKind::Dip);
        assert!((ev[0].extremum - 0.5).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn classification_is_total(x in 0.0f64..5.0) {
            let t = PqThresholds::default();
            let c = classify_rms(x, &t);
            let expected = [
                x < 0.1,
                (0.1..=0.9).contains(&x),
                x > 0.9 && x < 1.1,
                (1.1..=1.8).contains(&x),
                x > 1.8,
            ];
            prop_assert_eq!(expected.iter().filter(|b| **b).count(), 1);
            let idx = match c {
                RmsClass::Interruption => 0,
                RmsClass::Dip => 1,
                RmsClass::Normal => 2,
                RmsClass::Swell => 3,
                RmsClass::OutOfBand => 4,
            };
            prop_assert!(expected[idx]);
        }

        #[test]
        fn tracking_is_idempotent_and_non_overlapping(v in proptest::collection::vec(0.0f64..2.0, 1..60)) {
            let s = series(&v);
            let t = PqThresholds::default();
            let a = track_events(&s, &t, FS).unwrap();
            prop_assert_eq!(&a, &track_events(&s, &t, FS).unwrap());
            for e in &a {
                prop_assert!(e.start_index < e.end_index);
            }
            for kind in [PqEventKind::Swell, PqEventKind::Dip, PqEventKind::Interruption, PqEventKind::RapidChange] {
                let mut spans: Vec<_> = a.iter().filter(|e| e.kind == kind).map(|e| (e.start_index, e.end_index)).collect();
                spans.sort();
                for w in spans.windows(2) {
                    prop_assert!(w[0].1 <= w[1].0);
                }
            }
            for e in a.iter().filter(|e| e.kind == PqEventKind::Interruption) {
                let parent = a.iter().find(|d| Some(d.id) == e.parent).unwrap();
                prop_assert!(parent.start_index <= e.start_index && e.end_index <= parent.end_index);
            }
        }
    }
}
