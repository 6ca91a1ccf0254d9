use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flightcast::commands::{evaluate, Forecaster};
use flightcast::{exit_code, EXIT_NUMERIC, EXIT_USAGE};
use flightcast_core::datagen::{generate, SyntheticConfig};
use flightcast_core::pipeline::{SplitSpec, SupervisedWindow};
use serde_json::Value;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flightcast")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self { dir: tempfile::tempdir().unwrap() };
        ok(&["datagen", "--seed", "3", "--out", &ws.path("data.csv")]);
        ws
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_string_lossy().into_owned()
    }

    fn config(&self, name: &str, json: &str) -> String {
        let p = self.path(name);
        std::fs::write(&p, json).unwrap();
        p
    }
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn datagen_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    ok(&["datagen", "--seed", "8", "--out", &p("a.csv")]);
    ok(&["datagen", "--seed", "8", "--out", &p("b.csv")]);
    ok(&["datagen", "--seed", "9", "--out", &p("c.csv")]);
    assert_eq!(read(p("a.csv")), read(p("b.csv")));
    assert_ne!(read(p("a.csv")), read(p("c.csv")));
    let text = String::from_utf8(read(p("a.csv"))).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "slice_start_utc,hour,qtr,day_of_week,month,dep_demand,swim_observed_departures"
    );
}

#[test]
fn shipped_synthetic_config_matches_default_generator() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.json");
    let cfg: SyntheticConfig = serde_json::from_str(&std::fs::read_to_string(root).unwrap()).unwrap();
    assert_eq!(cfg, SyntheticConfig::surge_bearing(2019));
}

#[test]
fn usage_and_data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv").to_string_lossy().into_owned();
    let model = dir.path().join("m.model").to_string_lossy().into_owned();

    assert_eq!(run(&["train", "--data", &missing, "--model", &model]).status.code(), Some(EXIT_USAGE));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(EXIT_USAGE));
    assert_eq!(run(&["train", "--kind", "mlp"]).status.code(), Some(EXIT_USAGE));
    assert_eq!(run(&["datagen", "--config", &missing, "--out", &model]).status.code(), Some(EXIT_USAGE));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"mode": "aspm", "observed_inputs": ["swim"]}"#).unwrap();
    let out = run(&["train", "--config", bad.to_str().unwrap(), "--data", &missing, "--model", &model]);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));

    std::fs::write(&bad, r#"{"epochs": 3}"#).unwrap();
    assert_eq!(run(&["train", "--config", bad.to_str().unwrap()]).status.code(), Some(EXIT_USAGE));
}

#[test]
fn numeric_failures_map_to_exit_three() {
    use flightcast_core::Error;
    let div = anyhow::Error::from(Error::Divergence { epoch: 2, loss: f64::NAN }).context("training");
    assert_eq!(exit_code(&div), EXIT_NUMERIC);
    let num = anyhow::Error::from(Error::Numeric("non-finite forecast".into()));
    assert_eq!(exit_code(&num), EXIT_NUMERIC);
    let contract = anyhow::Error::from(Error::Contract("bad window".into()));
    assert_eq!(exit_code(&contract), EXIT_USAGE);
}

/// Returns the true targets, so every metric must be perfect.
struct Oracle {
    n_lag: usize,
    n_look_ahead: usize,
}

impl Forecaster for Oracle {
    fn n_lag(&self) -> usize {
        self.n_lag
    }

    fn n_look_ahead(&self) -> usize {
        self.n_look_ahead
    }

    fn forecast_many(&self, windows: &[&SupervisedWindow]) -> flightcast_core::Result<Vec<Vec<f64>>> {
        Ok(windows.iter().map(|w| w.targets.clone()).collect())
    }
}

#[test]
fn oracle_forecaster_scores_perfectly_at_every_level() {
    let records = generate(&SyntheticConfig::surge_bearing(4)).unwrap();
    let oracle = Oracle { n_lag: 10, n_look_ahead: 124 };
    let split = SplitSpec::year_2019_jan_2020();
    let (report, forecasts) = evaluate(&oracle, &records, &split, "ASPM", "Oracle").unwrap();
    // January holds 31 * 96 test slices; every origin needs its full horizon inside it
    assert_eq!(report.n_origins, 31 * 96 - 124 + 1);
    assert_eq!(report.metrics.quarter.n, report.n_origins * 124);
    for m in [Some(report.metrics.quarter), report.metrics.hourly, report.metrics.daily] {
        let m = m.unwrap();
        assert_eq!((m.mse, m.mae, m.explained_variance), (0.0, 0.0, 1.0));
    }
    assert_eq!(forecasts.n_pairs(), report.metrics.quarter.n);
}

#[test]
fn train_evaluate_forecast_compare_round_trip() {
    let ws = Workspace::new();
    let cfg = ws.config("lr.json", r#"{ "mode": "aspm+swim", "kind": "lr", "n_lag": 10, "n_look_ahead": 8 }"#);
    let data = ws.path("data.csv");
    let model = ws.path("lr.model");
    let report = ws.path("lr.json.out");
    ok(&["train", "--config", &cfg, "--data", &data, "--model", &model]);
    ok(&["evaluate", "--config", &cfg, "--data", &data, "--model", &model, "--out", &report]);

    let json: Value = serde_json::from_slice(&read(&report)).unwrap();
    assert_eq!(json["data_label"], "ASPM+SWIM");
    assert_eq!(json["model_label"], "Linear_Regression");
    for level in ["quarter", "hourly", "daily"] {
        let block = &json["metrics"][level];
        for key in ["mse", "mae", "explained_variance", "n"] {
            assert!(block[key].is_number(), "{level}.{key} missing: {block}");
        }
    }
    let pairs = json["metrics"]["quarter"]["n"].as_u64().unwrap() as usize;
    let csv = String::from_utf8(read(ws.path("lr.json.forecasts.csv"))).unwrap();
    assert_eq!(csv.lines().count(), pairs + 1);

    let out = ok(&["forecast", "--data", &data, "--model", &model]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "timestamp,predicted");
    assert_eq!(lines.len(), 1 + 8);
    // the default data ends on 2020-01-31 23:45
    assert!(lines[1].starts_with("2020-02-01T00:00:00Z,"), "{}", lines[1]);
    assert!(lines[1..].iter().all(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap() >= 0.0));

    let out = ok(&["compare", &report]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("Linear_Regression") && table.contains("0%"), "{table}");
}

#[test]
fn swim_model_rejects_data_without_swim() {
    let ws = Workspace::new();
    let cfg = ws.config("lr.json", r#"{ "mode": "aspm+swim", "kind": "lr", "n_lag": 4, "n_look_ahead": 2 }"#);
    let model = ws.path("m.model");
    ok(&["train", "--config", &cfg, "--data", &ws.path("data.csv"), "--model", &model]);

    let text = std::fs::read_to_string(ws.path("data.csv")).unwrap();
    let stripped: String = text.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string() + "\n").collect();
    std::fs::write(ws.path("aspm.csv"), stripped).unwrap();
    let out = run(&["forecast", "--data", &ws.path("aspm.csv"), "--model", &model]);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
}

#[test]
fn ar_ignores_epochs_and_writes_no_loss_curve() {
    let ws = Workspace::new();
    let data = ws.path("data.csv");
    let mut models = Vec::new();
    for epochs in [1, 40] {
        let cfg = ws.config(
            &format!("ar{epochs}.json"),
            &format!(r#"{{ "kind": "ar", "ar_order": 24, "n_look_ahead": 8, "training": {{ "epochs": {epochs} }} }}"#),
        );
        let model = ws.path(&format!("ar{epochs}.model"));
        ok(&["train", "--config", &cfg, "--data", &data, "--model", &model]);
        assert!(!Path::new(&ws.path(&format!("ar{epochs}.loss.csv"))).exists());
        models.push(read(&model));
    }
    assert_eq!(models[0], models[1]);
}

#[test]
fn neural_training_writes_loss_curve() {
    let ws = Workspace::new();
    let cfg = ws.config(
        "s.json",
        r#"{ "kind": "seq2seq", "n_lag": 4, "n_look_ahead": 2, "hidden_dim": 4, "train_stride": 64,
             "training": { "epochs": 2 } }"#,
    );
    let model = ws.path("s.model");
    let out = ok(&["train", "--config", &cfg, "--data", &ws.path("data.csv"), "--model", &model, "--seed", "1"]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("2 epochs"));
    let loss = std::fs::read_to_string(ws.path("s.loss.csv")).unwrap();
    let lines: Vec<&str> = loss.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "epoch,loss");
    assert!(lines[2].starts_with("2,"));
}
