use std::path::Path;
use std::str::FromStr;

use gridwatch_core::hif_features::{FeatureMap, HifFeatureExtractor};
use gridwatch_core::load_features::event_features;
use gridwatch_core::simgen::corpus::WindowClass;
use gridwatch_core::simgen::LoadClass;
use gridwatch_nn::detectors::{
    confusion_table, evaluate, evaluate_multiclass, ConfusionMatrix, HifClassifier, LoadClassifier, HIF_MODEL_KIND,
    LOAD_MODEL_KIND,
};
use gridwatch_nn::disagg::{
    disaggregate_series, mae, parse_power_series, sae, score, train_disagg, Cvae, CVAE_MODEL_KIND, DEFAULT_MAX_GAP_S,
    SAMPLE_PERIOD_S,
};
use gridwatch_nn::model_file::ModelFile;
use gridwatch_core::simgen::DisaggWindow;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::corpus::{hif_label_index, hif_labels, window_maps};
use crate::error::{CliError, Result};
use crate::output::{is_held_out, Manifest, Output};
use crate::sample_file::SampleFile;
use crate::simulate::{HOUSEHOLD_AGGREGATE_FILE, WINDOWS_FILE};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Task {
    Hif2,
    Hif3,
    LoadId,
    /// Optional appliance that must match the corpus.
    Disagg(Option<String>),
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "hif2" => Ok(Task::Hif2),
            "hif3" => Ok(Task::Hif3),
            "loadid" => Ok(Task::LoadId),
            "disagg" => Ok(Task::Disagg(None)),
            _ => match s.strip_prefix("disagg:") {
                Some(a) if !a.is_empty() => Ok(Task::Disagg(Some(a.into()))),
                _ => Err(format!("unknown task `{s}` (expected hif2, hif3, loadid or disagg[:appliance])")),
            },
        }
    }
}

impl Task {
    fn name(&self) -> String {
        match self {
            Task::Hif2 => "hif2".into(),
            Task::Hif3 => "hif3".into(),
            Task::LoadId => "loadid".into(),
            Task::Disagg(_) => "disagg".into(),
        }
    }
}

/// Train/test split of a labelled set.
pub struct Split<T> {
    pub train: Vec<T>,
    pub train_labels: Vec<usize>,
    pub test: Vec<T>,
    pub test_labels: Vec<usize>,
}

impl<T> Default for Split<T> {
    fn default() -> Self {
        Split {
            train: Vec::new(),
            train_labels: Vec::new(),
            test: Vec::new(),
            test_labels: Vec::new(),
        }
    }
}

impl<T> Split<T> {
    fn push(&mut self, row: usize, x: T, label: usize) {
        if is_held_out(row) {
            self.test.push(x);
            self.test_labels.push(label);
        } else {
            self.train.push(x);
            self.train_labels.push(label);
        }
    }
}

pub fn hif_dataset(dir: &Path, classes: usize) -> Result<Split<FeatureMap>> {
    let m = Manifest::read(dir)?;
    m.expect_kind("hif")?;
    let mut split = Split::default();
    let mut ex: Option<HifFeatureExtractor> = None;
    for (i, row) in m.rows.iter().enumerate() {
        let class = WindowClass::from_str(&row.label)?;
        let f = SampleFile::read(&Manifest::path(dir, row))?;
        let fs = f.header.sample_rate_hz;
        if ex.as_ref().is_none_or(|e| e.sample_rate_hz() != fs) {
            ex = Some(HifFeatureExtractor::new(fs)?);
        }
        for map in window_maps(ex.as_ref().expect("set above"), &f.samples)? {
            split.push(i, map, hif_label_index(class, classes));
        }
    }
    Ok(split)
}

pub fn load_dataset(dir: &Path, f0_hz: f64) -> Result<Split<Vec<f64>>> {
    let m = Manifest::read(dir)?;
    m.expect_kind("load")?;
    let mut split = Split::default();
    for (i, row) in m.rows.iter().enumerate() {
        let class = LoadClass::from_str(&row.label)?;
        let vfile = row
            .meta
            .get("voltage")
            .and_then(Value::as_str)
            .ok_or_else(|| CliError::Data(format!("row {i} has no voltage file")))?;
        let at = row
            .meta
            .get("event_index")
            .and_then(Value::as_u64)
            .ok_or_else(|| CliError::Data(format!("row {i} has no event index")))?;
        let v = SampleFile::read(&dir.join(vfile))?.stream()?;
        let c = SampleFile::read(&Manifest::path(dir, row))?.stream()?;
        let f = event_features(&v, &c, at as usize, f0_hz)?;
        split.push(i, f.values().to_vec(), class.index());
    }
    Ok(split)
}

/// Windows file of a disagg corpus with its appliance.
pub fn disagg_windows(dir: &Path) -> Result<(String, Split<DisaggWindow>)> {
    let m = Manifest::read(dir)?;
    m.expect_kind("disagg")?;
    let row = m
        .rows
        .iter()
        .find(|r| r.file == WINDOWS_FILE)
        .ok_or_else(|| CliError::Data(format!("corpus has no {WINDOWS_FILE}")))?;
    let p = Manifest::path(dir, row);
    let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
    let mut split = Split::default();
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let w: DisaggWindow = serde_json::from_str(line)?;
        split.push(i, w, 0);
    }
    Ok((row.label.clone(), split))
}

fn hif_eval(c: &HifClassifier, maps: &[FeatureMap], labels: &[usize]) -> Result<Value> {
    if maps.is_empty() {
        return Err(CliError::Data("no held-out maps".into()));
    }
    let refs: Vec<&FeatureMap> = maps.iter().collect();
    let pred: Vec<usize> = c.classify_batch(&refs)?.iter().map(|v| v.class_index).collect();
    let k = c.classes();
    let table = confusion_table(&pred, labels, k)?;
    let mut v = json!({
        "labels": hif_labels(k),
        "test_examples": maps.len(),
        "confusion": table,
        "per_class_pct": evaluate_multiclass(&table)?,
    });
    if k == 2 {
        let is_hif = |i: &usize| *i == 0;
        let cm = ConfusionMatrix::from_predictions(
            &pred.iter().map(is_hif).collect::<Vec<_>>(),
            &labels.iter().map(is_hif).collect::<Vec<_>>(),
        )?;
        v["metrics"] = serde_json::to_value(evaluate(&cm)?)?;
    }
    Ok(v)
}

fn load_eval(c: &LoadClassifier, feats: &[Vec<f64>], labels: &[usize]) -> Result<Value> {
    if feats.is_empty() {
        return Err(CliError::Data("no held-out events".into()));
    }
    let pred: Vec<usize> = c.classify_batch(feats)?.iter().map(|v| v.class_index).collect();
    let table = confusion_table(&pred, labels, c.labels.len())?;
    let correct = pred.iter().zip(labels).filter(|(p, a)| p == a).count();
    Ok(json!({
        "labels": c.labels,
        "test_examples": feats.len(),
        "accuracy_pct": 100.0 * correct as f64 / feats.len() as f64,
        "confusion": table,
        "per_class_pct": evaluate_multiclass(&table)?,
    }))
}

fn read_series_watts(p: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
    Ok(parse_power_series(&text, SAMPLE_PERIOD_S, DEFAULT_MAX_GAP_S)?.watts)
}

fn disagg_eval(c: &Cvae, dir: &Path, test: &[DisaggWindow]) -> Result<Value> {
    let mut v = json!({ "appliance": c.appliance_id });
    if !test.is_empty() {
        let truth: Vec<Vec<f64>> = test.iter().map(|w| w.target.clone()).collect();
        let agg: Vec<&[f64]> = test.iter().map(|w| w.aggregate.as_slice()).collect();
        let s = score(&truth, &c.disaggregate_batch(&agg)?)?;
        v["test_windows"] = json!(test.len());
        v["window_mae_w"] = json!(s.mae_w);
        v["window_sae"] = json!(s.sae);
    }
    let house = dir.join(HOUSEHOLD_AGGREGATE_FILE);
    let truth = dir.join(format!("household_{}.txt", c.appliance_id));
    if house.exists() && truth.exists() {
        let agg = read_series_watts(&house)?;
        let y = read_series_watts(&truth)?;
        let est = disaggregate_series(c, &agg)?;
        v["household_samples"] = json!(est.len());
        v["household_mae_w"] = json!(mae(&y, &est)?);
        v["household_sae"] = json!(sae(&y, &est).ok());
    }
    Ok(v)
}

pub fn train(task: &Task, corpus: &Path, model_out: &Path, cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let tcfg = gridwatch_nn::TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let (file, train_n, test_n, final_loss, eval): (ModelFile, usize, usize, Option<f64>, Value) = match task {
        Task::Hif2 | Task::Hif3 => {
            let k = if *task == Task::Hif2 { 2 } else { 3 };
            let d = hif_dataset(corpus, k)?;
            let mut c = HifClassifier::new(k, cfg.seed)?;
            let h = c.fit(&d.train, &d.train_labels, &tcfg)?;
            let eval = hif_eval(&c, &d.test, &d.test_labels)?;
            (c.to_model_file(), d.train.len(), d.test.len(), h.epoch_loss.last().copied(), eval)
        }
        Task::LoadId => {
            let d = load_dataset(corpus, cfg.load.f0_hz)?;
            let labels = LoadClass::ALL.iter().map(|c| c.as_str().to_string()).collect();
            let mut c = LoadClassifier::new(cfg.load.hidden, labels, cfg.seed)?;
            let h = c.fit(&d.train, &d.train_labels, &tcfg)?;
            let eval = load_eval(&c, &d.test, &d.test_labels)?;
            (c.to_model_file(), d.train.len(), d.test.len(), h.epoch_loss.last().copied(), eval)
        }
        Task::Disagg(want) => {
            let (appliance, d) = disagg_windows(corpus)?;
            if let Some(w) = want {
                if *w != appliance {
                    return Err(CliError::Data(format!("task names `{w}` but the corpus holds `{appliance}`")));
                }
            }
            let dcfg = gridwatch_nn::TrainConfig {
                seed: cfg.seed,
                ..cfg.disagg.train.clone()
            };
            let mut c = Cvae::new(&appliance, cfg.disagg.model.clone(), cfg.seed)?;
            let h = train_disagg(&mut c, &d.train, &dcfg)?;
            let eval = disagg_eval(&c, corpus, &d.test)?;
            (c.to_model_file()?, d.train.len(), d.test.len(), h.epoch_loss.last().map(|l| l.total), eval)
        }
    };
    file.save(model_out)?;
    out.record(&json!({
        "task": task.name(),
        "model": model_out.display().to_string(),
        "train_examples": train_n,
        "test_examples": test_n,
        "final_train_loss": final_loss,
        "eval": eval,
    }))
}

/// Scores a model on the held-out rows of a corpus of the matching kind.
pub fn eval(model: &Path, corpus: &Path, cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let m = ModelFile::load(model)?;
    let (trained, v) = match m.kind.as_str() {
        HIF_MODEL_KIND => {
            let c = HifClassifier::from_model_file(&m)?;
            let d = hif_dataset(corpus, c.classes())?;
            (c.trained, hif_eval(&c, &d.test, &d.test_labels)?)
        }
        LOAD_MODEL_KIND => {
            let c = LoadClassifier::from_model_file(&m)?;
            let d = load_dataset(corpus, cfg.load.f0_hz)?;
            (c.trained, load_eval(&c, &d.test, &d.test_labels)?)
        }
        CVAE_MODEL_KIND => {
            let c = Cvae::from_model_file(&m)?;
            let (appliance, d) = disagg_windows(corpus)?;
            if appliance != c.appliance_id {
                return Err(CliError::Data(format!(
                    "model is for `{}`, corpus holds `{appliance}`",
                    c.appliance_id
                )));
            }
            (c.trained, disagg_eval(&c, corpus, &d.test)?)
        }
        other => return Err(CliError::Data(format!("unknown model kind `{other}`"))),
    };
    let mut rec = json!({ "model_kind": m.kind, "trained": trained, "eval": v });
    if !trained {
        log::warn!("evaluating an untrained model");
        rec["warning"] = json!("model is untrained");
    }
    out.record(&rec)
}
