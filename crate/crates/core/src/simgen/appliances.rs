//! Appliance activations and aggregate power windows at 1/6 Hz.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{rng, subseed};
use crate::error::{Error, Result};

/// Sampling period of low-rate power series.
pub const LOW_RATE_PERIOD_S: f64 = 6.0;

/// One state of an appliance cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplianceState {
    pub power_w: f64,
    /// Inclusive range the state duration is drawn from, in seconds.
    pub duration_s: (f64, f64),
}

impl ApplianceState {
    pub fn new(power_w: f64, min_s: f64, max_s: f64) -> Self {
        ApplianceState {
            power_w,
            duration_s: (min_s, max_s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplianceProfile {
    pub id: String,
    pub states: Vec<ApplianceState>,
    /// Periodic profiles repeat their states back to back.
    pub periodic: bool,
    /// Per-activation multiplicative spread on every state power.
    pub power_jitter: f64,
}

impl ApplianceProfile {
    pub fn new(id: &str, states: Vec<ApplianceState>, periodic: bool) -> Result<Self> {
        let p = ApplianceProfile {
            id: id.to_string(),
            states,
            periodic,
            power_jitter: 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.is_empty() {
            return Err(Error::Parameter(format!("profile {} has no states", self.id)));
        }
        for s in &self.states {
            let (lo, hi) = s.duration_s;
            if !(s.power_w >= 0.0 && s.power_w.is_finite()) {
                return Err(Error::Parameter(format!("negative power in {}", self.id)));
            }
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::Parameter(format!("bad duration range in {}", self.id)));
            }
        }
        if !(0.0..1.0).contains(&self.power_jitter) {
            return Err(Error::Parameter("power jitter must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn kettle() -> Self {
        ApplianceProfile {
            id: "kettle".into(),
            states: vec![ApplianceState::new(2000.0, 90.0, 240.0)],
            periodic: false,
            power_jitter: 0.1,
        }
    }

    /// About 18 min on and 42 min off on average.
    pub fn fridge() -> Self {
        ApplianceProfile {
            id: "fridge".into(),
            states: vec![
                ApplianceState::new(120.0, 900.0, 1260.0),
                ApplianceState::new(0.0, 2100.0, 2940.0),
            ],
            periodic: true,
            power_jitter: 0.05,
        }
    }

    pub fn microwave() -> Self {
        ApplianceProfile {
            id: "microwave".into(),
            states: vec![
                ApplianceState::new(1250.0, 60.0, 150.0),
                ApplianceState::new(450.0, 30.0, 60.0),
                ApplianceState::new(1250.0, 30.0, 90.0),
            ],
            periodic: false,
            power_jitter: 0.05,
        }
    }

    pub fn dishwasher() -> Self {
        ApplianceProfile {
            id: "dishwasher".into(),
            states: vec![
                ApplianceState::new(2100.0, 600.0, 1200.0),
                ApplianceState::new(150.0, 1200.0, 1800.0),
                ApplianceState::new(2100.0, 600.0, 900.0),
                ApplianceState::new(60.0, 600.0, 1200.0),
            ],
            periodic: false,
            power_jitter: 0.05,
        }
    }

    pub fn washing_machine() -> Self {
        ApplianceProfile {
            id: "washing_machine".into(),
            states: vec![
                ApplianceState::new(2000.0, 600.0, 1200.0),
                ApplianceState::new(250.0, 1800.0, 2400.0),
                ApplianceState::new(120.0, 600.0, 600.0),
                ApplianceState::new(500.0, 300.0, 600.0),
            ],
            periodic: false,
            power_jitter: 0.05,
        }
    }

    pub fn builtin(id: &str) -> Option<Self> {
        match id {
            "kettle" => Some(Self::kettle()),
            "fridge" => Some(Self::fridge()),
            "microwave" => Some(Self::microwave()),
            "dishwasher" => Some(Self::dishwasher()),
            "washing_machine" => Some(Self::washing_machine()),
            _ => None,
        }
    }

    pub const BUILTIN_IDS: [&'static str; 5] =
        ["kettle", "fridge", "microwave", "dishwasher", "washing_machine"];
}

fn walk_states<R: Rng>(profile: &ApplianceProfile, scale: f64, r: &mut R, out: &mut Vec<f64>) {
    for s in &profile.states {
        let (lo, hi) = s.duration_s;
        let d = if hi > lo { r.random_range(lo..=hi) } else { lo };
        let n = (d / LOW_RATE_PERIOD_S).round().max(1.0) as usize;
        out.extend(std::iter::repeat_n(s.power_w * scale, n));
    }
}

fn activation_scale<R: Rng>(profile: &ApplianceProfile, r: &mut R) -> f64 {
    if profile.power_jitter > 0.0 {
        1.0 + r.random_range(-profile.power_jitter..=profile.power_jitter)
    } else {
        1.0
    }
}

/// One complete cycle of `profile`, sampled every 6 s.
pub fn gen_activation(profile: &ApplianceProfile, seed: u64) -> Result<Vec<f64>> {
    profile.validate()?;
    let mut r = rng(seed);
    let scale = activation_scale(profile, &mut r);
    let mut out = Vec::new();
    walk_states(profile, scale, &mut r, &mut out);
    Ok(out)
}

/// `len` samples of back-to-back cycles of a periodic profile, starting at a
/// random point within the first cycle. One-shot profiles give one
/// activation padded with zeros.
pub fn gen_activation_series(profile: &ApplianceProfile, len: usize, seed: u64) -> Result<Vec<f64>> {
    profile.validate()?;
    let mut r = rng(seed);
    let scale = activation_scale(profile, &mut r);
    let mut out = Vec::new();
    walk_states(profile, scale, &mut r, &mut out);
    if !profile.periodic {
        out.resize(out.len().max(len), 0.0);
        out.truncate(len);
        return Ok(out);
    }
    let skip = r.random_range(0..out.len());
    while out.len() < len + skip {
        walk_states(profile, scale, &mut r, &mut out);
    }
    Ok(out[skip..skip + len].to_vec())
}

/// An activation placed at `offset` within a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedActivation {
    pub appliance_id: String,
    pub offset: usize,
    pub power_w: Vec<f64>,
}

impl PlacedActivation {
    /// Contribution over a window of `len` samples.
    pub fn contribution(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for (o, p) in out[self.offset..].iter_mut().zip(&self.power_w) {
            *o = *p;
        }
        out
    }
}

/// Aggregate power window with the ground truth of one appliance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisaggWindow {
    pub aggregate: Vec<f64>,
    pub target: Vec<f64>,
    pub appliance_id: String,
    /// (mean, std) of the aggregate when the window has been normalized.
    pub normalization: Option<(f64, f64)>,
    pub components: Vec<PlacedActivation>,
    pub noise: Vec<f64>,
}

impl DisaggWindow {
    pub fn len(&self) -> usize {
        self.aggregate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aggregate.is_empty()
    }

    pub fn contains_target(&self) -> bool {
        self.target.iter().any(|&v| v > 0.0)
    }
}

/// Sums randomly shifted `activations` into a window of `len` samples.
///
/// Activations whose id is `target_id` are left out entirely when
/// `include_target` is false, and the ground truth is then all zeros. The
/// noise term is a constant floor of `3 * noise_sigma_w` plus Gaussian noise
/// clipped to three standard deviations, so the aggregate never goes
/// negative.
pub fn gen_aggregate(
    activations: &[(String, Vec<f64>)],
    len: usize,
    target_id: &str,
    include_target: bool,
    noise_sigma_w: f64,
    seed: u64,
) -> Result<DisaggWindow> {
    if len == 0 {
        return Err(Error::InvalidSize("empty aggregate window".into()));
    }
    if !(noise_sigma_w >= 0.0 && noise_sigma_w.is_finite()) {
        return Err(Error::Parameter("noise sigma must be non-negative".into()));
    }
    let mut r = rng(subseed(seed, 1));
    let mut components = Vec::new();
    for (id, power) in activations {
        if power.len() > len {
            return Err(Error::Length {
                needed: power.len(),
                available: len,
            });
        }
        if !include_target && id == target_id {
            continue;
        }
        let offset = r.random_range(0..=len - power.len());
        components.push(PlacedActivation {
            appliance_id: id.clone(),
            offset,
            power_w: power.clone(),
        });
    }
    let mut nr = rng(subseed(seed, 2));
    let noise: Vec<f64> = (0..len)
        .map(|_| {
            if noise_sigma_w == 0.0 {
                return 0.0;
            }
            let g: f64 = StandardNormal.sample(&mut nr);
            noise_sigma_w * (3.0 + g.clamp(-3.0, 3.0))
        })
        .collect();
    let mut aggregate = noise.clone();
    let mut target = vec![0.0; len];
    for c in &components {
        for (k, p) in c.power_w.iter().enumerate() {
            aggregate[c.offset + k] += p;
            if c.appliance_id == target_id {
                target[c.offset + k] += p;
            }
        }
    }
    Ok(DisaggWindow {
        aggregate,
        target,
        appliance_id: target_id.to_string(),
        normalization: None,
        components,
        noise,
    })
}
