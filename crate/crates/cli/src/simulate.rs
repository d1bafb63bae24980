use std::collections::BTreeMap;
use std::path::Path;

use clap::ValueEnum;
use gridwatch_core::simgen::corpus::{gen_window_corpus, CORPUS_RATE_HZ};
use gridwatch_core::simgen::{gen_load_event, subseed, LoadClass, LoadEventSpec};
use gridwatch_nn::disagg::{gen_disagg_corpus, gen_household, SAMPLE_PERIOD_S};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::corpus::{pq_scenario, write_power_series, PqScenario};
use crate::error::{CliError, Result};
use crate::output::{Manifest, ManifestRow, Output};
use crate::sample_file::{Encoding, SampleFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimKind {
    Hif,
    Load,
    Disagg,
    Pq,
    All,
}

impl SimKind {
    fn name(self) -> &'static str {
        match self {
            SimKind::Hif => "hif",
            SimKind::Load => "load",
            SimKind::Disagg => "disagg",
            SimKind::Pq => "pq",
            SimKind::All => "all",
        }
    }
}

#[derive(Debug, Serialize)]
struct SimRecord {
    kind: &'static str,
    dir: String,
    rows: usize,
    seed: u64,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn row(file: String, label: &str, meta: BTreeMap<String, serde_json::Value>) -> ManifestRow {
    ManifestRow {
        file,
        label: label.into(),
        meta,
    }
}

/// Writes one corpus per kind; `all` writes each kind into a subdirectory.
pub fn simulate(kind: SimKind, cfg: &RunConfig, dir: &Path, out: &mut Output) -> Result<()> {
    let kinds = match kind {
        SimKind::All => vec![SimKind::Hif, SimKind::Load, SimKind::Disagg, SimKind::Pq],
        k => vec![k],
    };
    for (n, k) in kinds.iter().enumerate() {
        let target = if kind == SimKind::All { dir.join(k.name()) } else { dir.to_path_buf() };
        create_dir(&target)?;
        let seed = subseed(cfg.seed, n as u64);
        let manifest = match k {
            SimKind::Hif => sim_hif(cfg, seed, &target)?,
            SimKind::Load => sim_load(cfg, seed, &target)?,
            SimKind::Disagg => sim_disagg(cfg, seed, &target)?,
            SimKind::Pq => sim_pq(cfg, seed, &target)?,
            SimKind::All => unreachable!("expanded above"),
        };
        manifest.write(&target)?;
        out.record(&SimRecord {
            kind: k.name(),
            dir: target.display().to_string(),
            rows: manifest.rows.len(),
            seed,
        })?;
    }
    Ok(())
}

fn sim_hif(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<Manifest> {
    let s = &cfg.simulate;
    let mut m = Manifest::new("hif", seed);
    for (i, item) in gen_window_corpus(s.hif_per_class, s.hif_window_len, seed)?.into_iter().enumerate() {
        let name = format!("{i:05}_{}.json", item.label.as_str());
        SampleFile::new(item.samples, CORPUS_RATE_HZ, "current", Encoding::F32le).write(&dir.join(&name))?;
        let meta = BTreeMap::from([
            ("params".to_string(), json!(item.params)),
            ("item_seed".to_string(), json!(item.seed)),
        ]);
        m.rows.push(row(name, item.label.as_str(), meta));
    }
    Ok(m)
}

fn sim_load(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<Manifest> {
    let mut m = Manifest::new("load", seed);
    let per = cfg.simulate.load_events_per_class;
    // Interleave classes so the every-fifth-row split stays balanced.
    for j in 0..per {
        for class in LoadClass::ALL {
            let i = m.rows.len();
            let ev = gen_load_event(&LoadEventSpec::new(class), subseed(seed, i as u64))?;
            let stem = format!("{i:05}_{}", class.as_str());
            let (vname, iname) = (format!("{stem}_v.json"), format!("{stem}_i.json"));
            let fs = ev.current.sample_rate_hz();
            SampleFile::new(ev.voltage.into_samples(), fs, "voltage", Encoding::F32le).write(&dir.join(&vname))?;
            SampleFile::new(ev.current.into_samples(), fs, "current", Encoding::F32le).write(&dir.join(&iname))?;
            let meta = BTreeMap::from([
                ("voltage".to_string(), json!(vname)),
                ("event_index".to_string(), json!(ev.event_index)),
                ("power_w".to_string(), json!(ev.power_w)),
                ("repeat".to_string(), json!(j)),
            ]);
            m.rows.push(row(iname, class.as_str(), meta));
        }
    }
    Ok(m)
}

pub const WINDOWS_FILE: &str = "windows.jsonl";
pub const HOUSEHOLD_AGGREGATE_FILE: &str = "household_aggregate.txt";

fn sim_disagg(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<Manifest> {
    let s = &cfg.simulate;
    let mut m = Manifest::new("disagg", seed);
    let windows = gen_disagg_corpus(&s.disagg_appliance, s.disagg_windows, &cfg.disagg.corpus, subseed(seed, 0))?;
    let mut text = String::new();
    for w in &windows {
        text.push_str(&serde_json::to_string(w)?);
        text.push('\n');
    }
    let p = dir.join(WINDOWS_FILE);
    std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
    m.rows.push(row(
        WINDOWS_FILE.into(),
        &s.disagg_appliance,
        BTreeMap::from([("role".to_string(), json!("windows")), ("windows".to_string(), json!(windows.len()))]),
    ));

    let house = gen_household(&cfg.disagg.household, subseed(seed, 1))?;
    write_power_series(&dir.join(HOUSEHOLD_AGGREGATE_FILE), 0.0, SAMPLE_PERIOD_S, &house.aggregate)?;
    m.rows.push(row(
        HOUSEHOLD_AGGREGATE_FILE.into(),
        "aggregate",
        BTreeMap::from([("role".to_string(), json!("aggregate"))]),
    ));
    for (id, watts) in &house.appliances {
        let name = format!("household_{id}.txt");
        write_power_series(&dir.join(&name), 0.0, SAMPLE_PERIOD_S, watts)?;
        m.rows.push(row(name, id, BTreeMap::from([("role".to_string(), json!("truth"))])));
    }
    Ok(m)
}

fn sim_pq(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<Manifest> {
    let mut m = Manifest::new("pq", seed);
    for sc in PqScenario::ALL {
        let x = pq_scenario(sc, cfg.simulate.pq_seconds, cfg.pq.nominal_rms_v, cfg.pq.f0_hz, CORPUS_RATE_HZ)?;
        let name = format!("{}.json", sc.as_str());
        SampleFile::new(x, CORPUS_RATE_HZ, "voltage", Encoding::F32le).write(&dir.join(&name))?;
        m.rows.push(row(
            name,
            sc.as_str(),
            BTreeMap::from([("level_fraction".to_string(), json!(sc.level()))]),
        ));
    }
    Ok(m)
}
