//! Two-diode arcing-fault model.
//!
//! Two ideal diodes in anti-parallel, each in series with a DC source and a
//! resistance. The positive branch conducts while `v > V_p`, the negative
//! branch while `v < -V_n`; inside the dead zone no current flows. Source
//! voltages and resistances are re-drawn every half cycle to reproduce the
//! random, asymmetric, intermittent character of an arc.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{band_limit, rng, BAND_LIMIT_FRACTION};
use crate::error::{Error, Result};
use crate::signal::{Channel, SampleStream};

/// Contact surface of a downed or touching conductor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    Tree,
    Sand,
    Soil,
}

impl Surface {
    pub const ALL: [Surface; 3] = [Surface::Tree, Surface::Sand, Surface::Soil];

    pub fn as_str(self) -> &'static str {
        match self {
            Surface::Tree => "tree",
            Surface::Sand => "sand",
            Surface::Soil => "soil",
        }
    }
}

impl std::str::FromStr for Surface {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tree" | "tree_branch" => Ok(Surface::Tree),
            "sand" => Ok(Surface::Sand),
            "soil" => Ok(Surface::Soil),
            other => Err(Error::Parameter(format!("unknown surface `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HifModelParams {
    /// Positive-branch DC source, volts.
    pub v_p: f64,
    /// Negative-branch DC source, volts.
    pub v_n: f64,
    /// Positive-branch resistance, ohms.
    pub r_p: f64,
    /// Negative-branch resistance, ohms.
    pub r_n: f64,
    /// Relative half-width of the uniform per-half-cycle draw of the sources.
    pub voltage_jitter: f64,
    /// Relative half-width of the uniform per-half-cycle draw of the resistances.
    pub resistance_jitter: f64,
    /// Probability that a whole cycle does not conduct.
    pub intermittence: f64,
    /// Resistance multiplier applied after each conducting cycle.
    pub buildup: f64,
    /// Buildup never takes the resistance below this fraction of its start.
    pub buildup_floor: f64,
    /// Broadband arc noise during conduction, relative to the branch current.
    pub arc_noise: f64,
}

impl HifModelParams {
    pub fn symmetric(v: f64, r: f64) -> Self {
        Self {
            v_p: v,
            v_n: v,
            r_p: r,
            r_n: r,
            voltage_jitter: 0.0,
            resistance_jitter: 0.0,
            intermittence: 0.0,
            buildup: 1.0,
            buildup_floor: 1.0,
            arc_noise: 0.0,
        }
    }

    /// Seeded parameter set for a contact surface at a given drive peak.
    ///
    /// Peak fault current lands roughly between 0.02 A and 0.3 A for drive
    /// peaks of 2.8-15.6 kV (2-11 kV RMS).
    pub fn preset(surface: Surface, drive_peak_v: f64, seed: u64) -> Self {
        let mut r = rng(seed);
        let (dead_zone, asym, vj, rj, intermittence, buildup, arc_noise) = match surface {
            Surface::Tree => (0.35..0.55, 0.05..0.20, 0.08, 0.20, 0.05, 0.98, 0.04),
            Surface::Sand => (0.20..0.40, 0.10..0.30, 0.15, 0.35, 0.20, 0.995, 0.08),
            Surface::Soil => (0.15..0.35, 0.05..0.25, 0.10, 0.25, 0.10, 0.99, 0.06),
        };
        let base = drive_peak_v * r.random_range(dead_zone);
        let skew = r.random_range(asym);
        let (v_p, v_n) = if r.random_bool(0.5) {
            (base * (1.0 + skew), base * (1.0 - skew))
        } else {
            (base * (1.0 - skew), base * (1.0 + skew))
        };
        let peak_current = r.random_range(0.02..0.3);
        let r_p = (drive_peak_v - v_p) / peak_current;
        let r_n = (drive_peak_v - v_n) / peak_current * r.random_range(0.8..1.25);
        Self {
            v_p,
            v_n,
            r_p,
            r_n,
            voltage_jitter: vj,
            resistance_jitter: rj,
            intermittence,
            buildup,
            buildup_floor: 0.5,
            arc_noise,
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = [self.v_p, self.v_n, self.r_p, self.r_n];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Parameter("HIF sources and resistances must be positive".into()));
        }
        let unit = [self.intermittence, self.voltage_jitter, self.resistance_jitter];
        if unit.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Parameter("HIF probabilities and jitters must lie in [0, 1]".into()));
        }
        if !(self.buildup > 0.0 && self.buildup <= 1.0) {
            return Err(Error::Parameter(format!("buildup {} outside (0, 1]", self.buildup)));
        }
        if !(self.buildup_floor > 0.0 && self.buildup_floor <= 1.0) {
            return Err(Error::Parameter("buildup floor outside (0, 1]".into()));
        }
        Ok(())
    }
}

/// Output of [`gen_hif`].
#[derive(Debug, Clone, PartialEq)]
pub struct HifCurrent {
    pub current: SampleStream,
    /// Set when the drive never leaves the dead zone.
    pub no_conduction: bool,
}

/// Fault current drawn by the two-diode model from `drive_voltage`.
///
/// Arc noise, when enabled, is band-limited; the piecewise conduction
/// current itself is left unfiltered so the dead zone stays exactly zero.
pub fn gen_hif(
    params: &HifModelParams,
    drive_voltage: &SampleStream,
    seed: u64,
) -> Result<HifCurrent> {
    params.validate()?;
    let v = drive_voltage.samples();
    let peak = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let no_conduction = peak <= params.v_p.min(params.v_n);
    let mut r = rng(seed);

    let draw = |r: &mut rand_chacha::ChaCha8Rng, base: f64, jitter: f64| {
        if jitter > 0.0 {
            base * (1.0 + r.random_range(-jitter..=jitter))
        } else {
            base
        }
    };

    let mut out = vec![0.0; v.len()];
    let mut noise_gate = vec![0.0; v.len()];
    let mut scale = 1.0f64;
    let mut positive = v.first().is_none_or(|&x| x >= 0.0);
    let mut conducting_cycle = !r.random_bool(params.intermittence);
    let mut conducted = false;
    let mut vp = draw(&mut r, params.v_p, params.voltage_jitter);
    let mut vn = draw(&mut r, params.v_n, params.voltage_jitter);
    let mut rp = draw(&mut r, params.r_p, params.resistance_jitter);
    let mut rn = draw(&mut r, params.r_n, params.resistance_jitter);

    for (n, &x) in v.iter().enumerate() {
        let now_positive = x >= 0.0;
        if now_positive != positive {
            positive = now_positive;
            if positive {
                // New cycle at the rising zero crossing.
                if conducted && conducting_cycle {
                    scale = (scale * params.buildup).max(params.buildup_floor);
                }
                conducted = false;
                conducting_cycle = !r.random_bool(params.intermittence);
                vp = draw(&mut r, params.v_p, params.voltage_jitter);
                rp = draw(&mut r, params.r_p, params.resistance_jitter);
            } else {
                vn = draw(&mut r, params.v_n, params.voltage_jitter);
                rn = draw(&mut r, params.r_n, params.resistance_jitter);
            }
        }
        if !conducting_cycle {
            continue;
        }
        if x > vp {
            out[n] = (x - vp) / (rp * scale);
            noise_gate[n] = out[n];
            conducted = true;
        } else if x < -vn {
            out[n] = (x + vn) / (rn * scale);
            noise_gate[n] = out[n];
            conducted = true;
        }
    }

    if params.arc_noise > 0.0 {
        let fs = drive_voltage.sample_rate_hz();
        let raw: Vec<f64> = noise_gate
            .iter()
            .map(|g| {
                let u: f64 = r.random_range(-1.0..1.0);
                g.abs() * u * params.arc_noise * 3f64.sqrt()
            })
            .collect();
        let noise = band_limit(&raw, fs, BAND_LIMIT_FRACTION * fs);
        for (o, nz) in out.iter_mut().zip(noise) {
            *o += nz;
        }
    }

    Ok(HifCurrent {
        current: SampleStream::new(out, drive_voltage.sample_rate_hz(), Channel::Current)?,
        no_conduction,
    })
}
