use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = "[simulate]\nhif_per_class = 4\nload_events_per_class = 2\ndisagg_windows = 30\n\
                     [train]\nepochs = 2\n[disagg.train]\nepochs = 1\n[disagg.household]\ndays = 0.1\n";

struct Sandbox {
    dir: tempfile::TempDir,
    config: PathBuf,
}

impl Sandbox {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("run.toml");
        std::fs::write(&config, SMALL).unwrap();
        Sandbox { dir, config }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_gridwatch"))
            .arg("--config")
            .arg(&self.config)
            .args(args)
            .env_remove("GRIDWATCH_LOG")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Vec<Value> {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        records(&out)
    }
}

fn records(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_series(p: &Path) -> Vec<f64> {
    std::fs::read_to_string(p)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn help_succeeds_and_bad_arguments_are_usage_errors() {
    let sb = Sandbox::new();
    assert_eq!(sb.run(&["--help"]).status.code(), Some(0));
    assert_eq!(sb.run(&["simulate", "--kind", "nonsense"]).status.code(), Some(1));
    assert_eq!(sb.run(&["frobnicate"]).status.code(), Some(1));
    // Commands that write files need a destination.
    assert_eq!(sb.run(&["simulate"]).status.code(), Some(1));
}

#[test]
fn unknown_config_keys_are_usage_errors() {
    let sb = Sandbox::new();
    std::fs::write(&sb.config, "[simulate]\nhif_per_clas = 3\n").unwrap();
    let out = sb.run(&["config"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hif_per_clas"));
}

#[test]
fn config_prints_parseable_defaults() {
    let sb = Sandbox::new();
    let out = sb.run(&["config"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    text.parse::<toml::Table>().unwrap();
}

#[test]
fn simulate_is_seeded_and_counts_rows() {
    let sb = Sandbox::new();
    let (a, b, c) = (sb.path("a"), sb.path("b"), sb.path("c"));
    sb.ok(&["--seed", "3", "--out", s(&a), "simulate", "--kind", "hif"]);
    sb.ok(&["--seed", "3", "--out", s(&b), "simulate", "--kind", "hif"]);
    sb.ok(&["--seed", "4", "--out", s(&c), "simulate", "--kind", "hif"]);
    let manifest: Value = serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["rows"].as_array().unwrap().len(), 3 * 4);
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    // Each row has a sidecar and a payload, plus the manifest.
    assert_eq!(names.len(), 2 * 3 * 4 + 1);
    for n in &names {
        assert_eq!(std::fs::read(a.join(n)).unwrap(), std::fs::read(b.join(n)).unwrap(), "{n:?}");
    }
    let payload = names.iter().find(|n| n.to_string_lossy().ends_with(".f32")).unwrap();
    assert_ne!(std::fs::read(a.join(payload)).unwrap(), std::fs::read(c.join(payload)).unwrap());
}

#[test]
fn detect_pq_finds_one_event_per_disturbance() {
    let sb = Sandbox::new();
    let corpus = sb.path("pq");
    sb.ok(&["--out", s(&corpus), "simulate", "--kind", "pq"]);
    let kinds = |file: &str| -> Vec<String> {
        sb.ok(&["detect-pq", "--input", s(&corpus.join(file))])
            .iter()
            .map(|r| r["kind"].as_str().unwrap().to_string())
            .collect()
    };
    assert!(kinds("normal.json").is_empty());
    assert_eq!(kinds("swell.json"), ["swell"]);
    assert_eq!(kinds("dip.json"), ["dip"]);
    // An interruption nests inside the dip that leads into it.
    let mut k = kinds("interruption.json");
    k.sort();
    assert_eq!(k, ["dip", "interruption"]);
}

#[test]
fn disaggregation_scores_match_the_written_estimate() {
    let sb = Sandbox::new();
    let corpus = sb.path("disagg");
    let models = sb.path("models");
    std::fs::create_dir_all(&models).unwrap();
    sb.ok(&["--out", s(&corpus), "simulate", "--kind", "disagg"]);
    sb.ok(&["--out", s(&models.join("kettle.json")), "train", "disagg:kettle", "--corpus", s(&corpus)]);
    let estimate = sb.path("estimate.txt");
    let truth = corpus.join("household_kettle.txt");
    let rec = &sb.ok(&[
        "disaggregate",
        "--models",
        s(&models),
        "--appliance",
        "kettle",
        "--series",
        s(&corpus.join("household_aggregate.txt")),
        "--truth",
        s(&truth),
        "--estimate",
        s(&estimate),
    ])[0];
    let (t, e) = (read_series(&truth), read_series(&estimate));
    assert_eq!(t.len(), e.len());
    assert_eq!(rec["samples"].as_u64().unwrap() as usize, t.len());
    let mae = t.iter().zip(&e).map(|(a, b)| (a - b).abs()).sum::<f64>() / t.len() as f64;
    assert!((rec["mae_w"].as_f64().unwrap() - mae).abs() < 1e-9 * mae.max(1.0), "{rec} vs {mae}");
    let (st, se): (f64, f64) = (t.iter().sum(), e.iter().sum());
    if st > 0.0 {
        assert!((rec["sae"].as_f64().unwrap() - (se - st).abs() / st).abs() < 1e-9, "{rec}");
    }
}

#[test]
fn newer_manifest_and_model_versions_are_data_errors() {
    let sb = Sandbox::new();
    let corpus = sb.path("hif");
    let model = sb.path("hif2.json");
    sb.ok(&["--out", s(&corpus), "simulate", "--kind", "hif"]);
    sb.ok(&["--out", s(&model), "train", "hif2", "--corpus", s(&corpus)]);

    let text = std::fs::read_to_string(&model).unwrap();
    let newer = sb.path("newer_model.json");
    std::fs::write(&newer, text.replacen("\"version\": 1", "\"version\": 2", 1)).unwrap();
    let out = sb.run(&["eval", "--model", s(&newer), "--corpus", s(&corpus)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("newer"));

    let mpath = corpus.join("manifest.json");
    let m = std::fs::read_to_string(&mpath).unwrap();
    std::fs::write(&mpath, m.replacen("\"version\": 1", "\"version\": 9", 1)).unwrap();
    let out = sb.run(&["eval", "--model", s(&model), "--corpus", s(&corpus)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("newer"));
}

#[test]
fn missing_input_is_a_data_error() {
    let sb = Sandbox::new();
    let out = sb.run(&["detect-pq", "--input", s(&sb.path("absent.json"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn strict_bench_reports_missed_targets_with_status_three() {
    let sb = Sandbox::new();
    // 0.3 s cannot hold a rate within 0.2 of 13 results per second.
    let out = sb.run(&["bench", "--seconds", "0.3", "--strict"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let rec = &records(&out)[0];
    assert_eq!(rec["passed"], Value::Bool(false));
    assert_eq!(rec["classifier_trained"], Value::Bool(false));

    let out = sb.run(&["bench", "--seconds", "0.3"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn text_format_writes_key_value_lines() {
    let sb = Sandbox::new();
    let corpus = sb.path("pq");
    sb.ok(&["--out", s(&corpus), "simulate", "--kind", "pq"]);
    let out = sb.run(&["--format", "text", "detect-pq", "--input", s(&corpus.join("swell.json"))]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.contains("kind=swell"), "{text}");
}
