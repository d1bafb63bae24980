//! Run configuration.
//!
//! A TOML file whose sections mirror the library configuration structs.
//! Unknown keys are rejected and every key has a default; `gridwatch
//! config` prints the full default file. Any key can be overridden from the
//! environment as `GRIDWATCH_<SECTION>__<KEY>` (path segments joined by a
//! double underscore, case-insensitive), for example
//! `GRIDWATCH_TRAIN__EPOCHS=5` or `GRIDWATCH_PQ__THRESHOLDS__SWELL_LO=1.12`.
//! Override values are parsed as TOML literals and fall back to strings.
//! Precedence: command-line flag, then environment, then file, then
//! default.

use std::path::Path;

use gridwatch_core::events::EventDetectConfig;
use gridwatch_core::pq::PqThresholds;
use gridwatch_nn::disagg::{CvaeConfig, DisaggCorpusConfig, HouseholdConfig};
use gridwatch_nn::TrainConfig;
use gridwatch_pipeline::hif::BenchConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const ENV_PREFIX: &str = "GRIDWATCH_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub simulate: SimulateConfig,
    pub pq: PqConfig,
    pub events: EventDetectConfig,
    pub train: TrainConfig,
    pub load: LoadConfig,
    pub disagg: DisaggConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            simulate: SimulateConfig::default(),
            pq: PqConfig::default(),
            events: EventDetectConfig::default(),
            train: TrainConfig {
                epochs: 20,
                ..TrainConfig::default()
            },
            load: LoadConfig::default(),
            disagg: DisaggConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Windows per class (normal, transient, HIF); HIF windows cycle
    /// through every surface and load ratio.
    pub hif_per_class: usize,
    /// Samples per HIF window at 20 kHz; one map per 1536 samples after
    /// the first 1792.
    pub hif_window_len: usize,
    pub load_events_per_class: usize,
    pub disagg_appliance: String,
    pub disagg_windows: usize,
    pub pq_seconds: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            hif_per_class: 27,
            hif_window_len: 1792,
            load_events_per_class: 30,
            disagg_appliance: "kettle".into(),
            disagg_windows: 400,
            pq_seconds: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PqConfig {
    pub nominal_rms_v: f64,
    pub f0_hz: f64,
    pub thresholds: PqThresholds,
}

impl Default for PqConfig {
    fn default() -> Self {
        PqConfig {
            nominal_rms_v: 230.0,
            f0_hz: 50.0,
            thresholds: PqThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadConfig {
    pub hidden: usize,
    pub f0_hz: f64,
}

impl Default for LoadConfig {
    fn default() -> Self {
        LoadConfig {
            hidden: gridwatch_nn::detectors::DEFAULT_LOAD_HIDDEN,
            f0_hz: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisaggConfig {
    pub model: CvaeConfig,
    pub train: TrainConfig,
    pub corpus: DisaggCorpusConfig,
    pub household: HouseholdConfig,
}

impl Default for DisaggConfig {
    fn default() -> Self {
        DisaggConfig {
            model: CvaeConfig {
                lambda: 0.001,
                ..CvaeConfig::default()
            },
            train: TrainConfig {
                batch_size: 64,
                epochs: 30,
                ..TrainConfig::default()
            },
            corpus: DisaggCorpusConfig::default(),
            household: HouseholdConfig::default(),
        }
    }
}

/// Sets `path` (already lower-cased segments) in `table`, creating
/// intermediate tables.
fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().ok_or_else(|| CliError::Usage("empty override key".into()))?;
    let mut t = table;
    for p in parents {
        let entry = t.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("override path crosses non-table key `{p}`")))?;
    }
    t.insert(last.clone(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl RunConfig {
    /// Parses `text` after applying `overrides` (`GRIDWATCH_` variables).
    pub fn from_toml_with(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Usage(format!("configuration: {e}")))?;
        for (k, v) in overrides {
            let Some(rest) = k.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            if rest == "LOG" {
                continue;
            }
            let path: Vec<String> = rest.split("__").map(|s| s.to_ascii_lowercase()).collect();
            set_path(&mut table, &path, parse_literal(v))?;
        }
        table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("configuration: {e}")))
    }

    /// The file at `path` (or defaults) with environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?,
            None => String::new(),
        };
        let env: Vec<(String, String)> = std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        Self::from_toml_with(&text, &env)
    }

    /// Default configuration as TOML, each key annotated with its
    /// environment variable.
    pub fn documented_defaults() -> String {
        let text = toml::to_string(&RunConfig::default()).expect("default config serializes");
        let mut section = String::new();
        let mut out = String::new();
        for line in text.lines() {
            let trimmed = line.trim();
            if trimmed.starts_with('[') && !trimmed.starts_with("[[") {
                section = trimmed.trim_matches(|c| c == '[' || c == ']').replace('.', "__");
                out.push_str(line);
                out.push('\n');
                continue;
            }
            match trimmed.split_once(" = ") {
                Some((key, _)) if !key.contains(' ') && !key.is_empty() => {
                    let var = if section.is_empty() {
                        format!("{ENV_PREFIX}{key}")
                    } else {
                        format!("{ENV_PREFIX}{section}__{key}")
                    };
                    out.push_str(&format!("# env: {}\n", var.to_ascii_uppercase()));
                }
                _ => {}
            }
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let text = toml::to_string(&RunConfig::default()).unwrap();
        assert_eq!(RunConfig::from_toml_with(&text, &[]).unwrap(), RunConfig::default());
        assert_eq!(RunConfig::from_toml_with("", &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_with("sed = 3", &[]).is_err());
        assert!(RunConfig::from_toml_with("[train]\nepochz = 3", &[]).is_err());
        assert!(RunConfig::from_toml_with("[pq.thresholds]\nswell = 1.2", &[]).is_err());
    }

    #[test]
    fn environment_overrides_file_values() {
        let env = vec![
            ("GRIDWATCH_TRAIN__EPOCHS".to_string(), "5".to_string()),
            ("GRIDWATCH_PQ__THRESHOLDS__SWELL_LO".to_string(), "1.12".to_string()),
            ("GRIDWATCH_SIMULATE__DISAGG_APPLIANCE".to_string(), "fridge".to_string()),
            ("GRIDWATCH_SEED".to_string(), "9".to_string()),
        ];
        let c = RunConfig::from_toml_with("seed = 3\n[train]\nepochs = 2\n", &env).unwrap();
        assert_eq!(c.train.epochs, 5);
        assert_eq!(c.seed, 9);
        assert_eq!(c.pq.thresholds.swell_lo, 1.12);
        assert_eq!(c.pq.thresholds.dip_hi, 0.9);
        assert_eq!(c.simulate.disagg_appliance, "fridge");
        let bad = vec![("GRIDWATCH_TRAIN__NOPE".to_string(), "1".to_string())];
        assert!(RunConfig::from_toml_with("", &bad).is_err());
    }

    #[test]
    fn documented_defaults_name_every_key() {
        let doc = RunConfig::documented_defaults();
        assert!(doc.contains("# env: GRIDWATCH_TRAIN__EPOCHS"));
        assert!(doc.contains("# env: GRIDWATCH_PQ__THRESHOLDS__SWELL_LO"));
        assert!(doc.contains("# env: GRIDWATCH_SEED"));
        let stripped: String = doc.lines().filter(|l| !l.starts_with("# env")).collect::<Vec<_>>().join("\n");
        assert_eq!(RunConfig::from_toml_with(&stripped, &[]).unwrap(), RunConfig::default());
    }
}
