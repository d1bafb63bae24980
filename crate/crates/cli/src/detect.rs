use std::collections::BTreeMap;
use std::path::Path;

use gridwatch_core::events::detect_events;
use gridwatch_core::hif_features::HifFeatureExtractor;
use gridwatch_core::load_features::event_features;
use gridwatch_core::pq::{rms_series, track_events, PqEvent};
use gridwatch_core::signal::Channel;
use gridwatch_nn::detectors::{HifClassifier, HifVerdict, LoadClassifier, HIF_MODEL_KIND, LOAD_MODEL_KIND};
use gridwatch_nn::disagg::{
    disaggregate_series, mae, parse_power_series, sae, Cvae, CVAE_MODEL_KIND, DEFAULT_MAX_GAP_S,
    SAMPLE_PERIOD_S,
};
use gridwatch_nn::model_file::ModelFile;
use gridwatch_pipeline::hif::{hif_chain, hif_source, HifPayload};
use gridwatch_pipeline::{latency_report, run_pipeline, Pacing, DEFAULT_CAPACITY};
use serde::Serialize;

use crate::config::RunConfig;
use crate::corpus::{window_maps, write_power_series};
use crate::error::{CliError, Result};
use crate::output::Output;
use crate::sample_file::SampleFile;

pub fn load_model(path: &Path, kind: &str) -> Result<ModelFile> {
    let m = ModelFile::load(path)?;
    m.expect_kind(kind)?;
    Ok(m)
}

fn read_channel(path: &Path, channel: Channel) -> Result<SampleFile> {
    let f = SampleFile::read(path)?;
    if f.header.channel_label != channel.as_str() {
        return Err(CliError::Data(format!(
            "{} holds {}, expected {}",
            path.display(),
            f.header.channel_label,
            channel.as_str()
        )));
    }
    Ok(f)
}

#[derive(Debug, Serialize)]
struct HifRecord {
    start_s: f64,
    end_s: f64,
    label: String,
    class_index: usize,
    probability: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    warning: Option<String>,
}

/// Batch and stream modes produce the same verdicts; stream mode routes
/// the samples through the threaded chain and reports its statistics on
/// stderr.
pub fn detect_hif(model: &Path, input: &Path, stream: bool, out: &mut Output) -> Result<()> {
    let classifier = HifClassifier::from_model_file(&load_model(model, HIF_MODEL_KIND)?)?;
    let file = read_channel(input, Channel::Current)?;
    let fs = file.header.sample_rate_hz;
    let verdicts: Vec<HifVerdict> = if stream {
        let run = run_pipeline(
            hif_chain(classifier, fs, DEFAULT_CAPACITY)?,
            hif_source(file.samples),
            Pacing::Unpaced,
        )?;
        let summary = serde_json::json!({
            "results": run.stats.results(),
            "queue_overflows": run.stats.queue_overflows,
            "max_queue_occupancy": run.stats.max_queue_occupancy,
            "lossless": run.stats.lossless(),
            "latency": latency_report(&run.stats).ok(),
        });
        eprintln!("stream stats: {summary}");
        run.results
            .into_iter()
            .map(|p| match p.payload {
                HifPayload::Verdict(v) => Ok(v),
                _ => Err(CliError::Data("stream chain emitted a non-verdict packet".into())),
            })
            .collect::<Result<_>>()?
    } else {
        let maps = window_maps(&HifFeatureExtractor::new(fs)?, &file.samples)?;
        let refs: Vec<_> = maps.iter().collect();
        classifier.classify_batch(&refs)?
    };
    for v in verdicts {
        out.record(&HifRecord {
            start_s: v.span.0 as f64 / fs,
            end_s: v.span.1 as f64 / fs,
            label: v.label,
            class_index: v.class_index,
            probability: v.probability,
            warning: v.warning,
        })?;
    }
    Ok(())
}

pub fn detect_pq_events(file: &SampleFile, cfg: &RunConfig) -> Result<Vec<PqEvent>> {
    let stream = file.stream()?;
    let series = rms_series(&stream, cfg.pq.nominal_rms_v, cfg.pq.f0_hz)?;
    Ok(track_events(&series, &cfg.pq.thresholds, stream.sample_rate_hz())?)
}

pub fn detect_pq(input: &Path, cfg: &RunConfig, out: &mut Output) -> Result<()> {
    for e in detect_pq_events(&read_channel(input, Channel::Voltage)?, cfg)? {
        out.record(&e)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct LoadRecord {
    time_s: f64,
    event_index: usize,
    label: String,
    probability: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    warning: Option<String>,
}

pub fn identify_load(model: &Path, voltage: &Path, current: &Path, cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let classifier = LoadClassifier::from_model_file(&load_model(model, LOAD_MODEL_KIND)?)?;
    let v = read_channel(voltage, Channel::Voltage)?.stream()?;
    let i = read_channel(current, Channel::Current)?.stream()?;
    if v.len() != i.len() || v.sample_rate_hz() != i.sample_rate_hz() {
        return Err(CliError::Data("voltage and current records are not aligned".into()));
    }
    let mut located = Vec::new();
    for b in detect_events(&i, &cfg.events)? {
        match event_features(&v, &i, b.peak, cfg.load.f0_hz) {
            Ok(f) => located.push((b.peak, f.values().to_vec())),
            Err(e) => log::warn!("skipping event at sample {}: {e}", b.peak),
        }
    }
    if located.is_empty() {
        return Ok(());
    }
    let feats: Vec<Vec<f64>> = located.iter().map(|(_, f)| f.clone()).collect();
    for ((idx, _), verdict) in located.iter().zip(classifier.classify_batch(&feats)?) {
        out.record(&LoadRecord {
            time_s: *idx as f64 / i.sample_rate_hz(),
            event_index: *idx,
            label: verdict.label,
            probability: verdict.probability,
            warning: verdict.warning,
        })?;
    }
    Ok(())
}

/// Every CVAE model file in `dir`, keyed by appliance.
pub fn load_cvae_models(dir: &Path) -> Result<BTreeMap<String, Cvae>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut models = BTreeMap::new();
    for p in paths {
        match ModelFile::load(&p) {
            Ok(m) if m.kind == CVAE_MODEL_KIND => {
                let c = Cvae::from_model_file(&m)?;
                models.insert(c.appliance_id.clone(), c);
            }
            Ok(_) => {}
            Err(e) => log::warn!("ignoring {}: {e}", p.display()),
        }
    }
    Ok(models)
}

#[derive(Debug, Serialize)]
pub struct DisaggRecord {
    pub appliance: String,
    pub samples: usize,
    pub gap_samples: usize,
    pub estimate_energy_wh: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mae_w: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

fn read_series(path: &Path) -> Result<gridwatch_nn::disagg::PowerSeries> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(parse_power_series(&text, SAMPLE_PERIOD_S, DEFAULT_MAX_GAP_S)?)
}

pub fn disaggregate(
    models: &Path,
    appliance: &str,
    series: &Path,
    truth: Option<&Path>,
    estimate_out: Option<&Path>,
    out: &mut Output,
) -> Result<()> {
    let mut found = load_cvae_models(models)?;
    let model = found.remove(appliance).ok_or_else(|| {
        let known: Vec<&str> = found.keys().map(String::as_str).collect();
        CliError::Data(format!(
            "no model for `{appliance}` in {} (found: {})",
            models.display(),
            known.join(", ")
        ))
    })?;
    let agg = read_series(series)?;
    let est = disaggregate_series(&model, &agg.watts)?;
    if let Some(p) = estimate_out {
        write_power_series(p, agg.start_s, agg.period_s, &est)?;
    }
    let (mae_w, sae_v) = match truth {
        Some(t) => {
            let truth = read_series(t)?;
            if truth.watts.len() != est.len() || truth.start_s != agg.start_s {
                return Err(CliError::Data(format!(
                    "truth covers {} samples from {} s, aggregate {} samples from {} s",
                    truth.watts.len(),
                    truth.start_s,
                    est.len(),
                    agg.start_s
                )));
            }
            (Some(mae(&truth.watts, &est)?), sae(&truth.watts, &est).ok())
        }
        None => (None, None),
    };
    out.record(&DisaggRecord {
        appliance: appliance.into(),
        samples: est.len(),
        gap_samples: agg.gap.iter().filter(|g| **g).count(),
        estimate_energy_wh: est.iter().sum::<f64>() * agg.period_s / 3600.0,
        mae_w,
        sae: sae_v,
        warning: (!model.trained).then(|| "model is untrained".to_string()),
    })
}
