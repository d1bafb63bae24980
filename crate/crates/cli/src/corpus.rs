//! Corpus helpers shared by the commands: map extraction, label mapping,
//! PQ scenarios and power-series text files.

use std::path::Path;

use gridwatch_core::hif_features::{FeatureMap, HifFeatureExtractor, HIF_MAP_SPAN};
use gridwatch_core::simgen::corpus::WindowClass;
use gridwatch_core::simgen::sinusoid;
use gridwatch_nn::detectors::{HIF_LABELS_2, HIF_LABELS_3};
use gridwatch_pipeline::hif::MAP_HOP;

use crate::error::{CliError, Result};

/// Maps at every `MAP_HOP` that fits, the same cadence as the stream chain.
pub fn window_maps(ex: &HifFeatureExtractor, samples: &[f64]) -> Result<Vec<FeatureMap>> {
    if samples.len() < HIF_MAP_SPAN {
        return Err(CliError::Data(format!(
            "{} samples is shorter than one {HIF_MAP_SPAN}-sample map",
            samples.len()
        )));
    }
    (0..=(samples.len() - HIF_MAP_SPAN) / MAP_HOP)
        .map(|k| Ok(ex.map_at(samples, k * MAP_HOP)?))
        .collect()
}

/// Class index of a window label for a 2- or 3-class HIF model.
pub fn hif_label_index(class: WindowClass, classes: usize) -> usize {
    match (classes, class) {
        (2, WindowClass::Hif) => 0,
        (2, _) => 1,
        (_, c) => HIF_LABELS_3.iter().position(|l| *l == c.as_str()).expect("every class has a label"),
    }
}

pub fn hif_labels(classes: usize) -> Vec<&'static str> {
    match classes {
        2 => HIF_LABELS_2.to_vec(),
        _ => HIF_LABELS_3.to_vec(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PqScenario {
    Normal,
    Swell,
    Dip,
    Interruption,
}

impl PqScenario {
    pub const ALL: [PqScenario; 4] = [PqScenario::Normal, PqScenario::Swell, PqScenario::Dip, PqScenario::Interruption];

    pub fn as_str(self) -> &'static str {
        match self {
            PqScenario::Normal => "normal",
            PqScenario::Swell => "swell",
            PqScenario::Dip => "dip",
            PqScenario::Interruption => "interruption",
        }
    }

    /// RMS level during the disturbance, as a fraction of nominal.
    pub fn level(self) -> f64 {
        match self {
            PqScenario::Normal => 1.0,
            PqScenario::Swell => 1.3,
            PqScenario::Dip => 0.7,
            PqScenario::Interruption => 0.05,
        }
    }
}

/// Voltage of `seconds` at `nominal_rms` whose amplitude steps to the
/// scenario level for 0.3 s starting at 40% of the record. Both edges sit
/// on half-cycle boundaries.
pub fn pq_scenario(scenario: PqScenario, seconds: f64, nominal_rms: f64, f0_hz: f64, fs: f64) -> Result<Vec<f64>> {
    let len = (seconds * fs).round() as usize;
    let half = (fs / f0_hz / 2.0).round() as usize;
    let cycle = 2 * half;
    let start = ((0.4 * len as f64) as usize / half) * half;
    let end = start + ((0.3 * fs) as usize / half) * half;
    if half == 0 || start < cycle || end + cycle > len {
        return Err(CliError::Usage(format!("{seconds} s is too short for a PQ scenario")));
    }
    let mut x = sinusoid(len, nominal_rms, f0_hz, fs, 0.0);
    for v in &mut x[start..end] {
        *v *= scenario.level();
    }
    Ok(x)
}

/// Writes `seconds watts` lines on a regular grid.
pub fn write_power_series(path: &Path, start_s: f64, period_s: f64, watts: &[f64]) -> Result<()> {
    let mut text = String::from("# seconds watts\n");
    for (k, w) in watts.iter().enumerate() {
        text.push_str(&format!("{} {w}\n", start_s + k as f64 * period_s));
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use gridwatch_core::signal::rms_of;

    #[test]
    fn map_count_follows_the_hop() {
        let ex = HifFeatureExtractor::new(20_000.0).unwrap();
        let x = vec![0.1; HIF_MAP_SPAN + 2 * MAP_HOP + 5];
        let maps = window_maps(&ex, &x).unwrap();
        assert_eq!(maps.len(), 3);
        assert_eq!(maps[2].span().0, 2 * MAP_HOP);
        assert!(window_maps(&ex, &x[..HIF_MAP_SPAN - 1]).is_err());
    }

    #[test]
    fn scenario_levels_are_exact_inside_the_disturbance() {
        let x = pq_scenario(PqScenario::Swell, 2.0, 230.0, 50.0, 20_000.0).unwrap();
        assert_eq!(x.len(), 40_000);
        assert!((rms_of(&x[16_000..16_400]).unwrap() - 299.0).abs() < 1e-6);
        assert!((rms_of(&x[0..400]).unwrap() - 230.0).abs() < 1e-6);
    }
}
