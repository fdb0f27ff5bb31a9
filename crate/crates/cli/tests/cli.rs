use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const LORENZ: &str = r#"{
  "model": { "kind": "lorenz96", "dim": 5, "forcing": 10.0, "forcing_unknown": true },
  "grid": { "t0": 0.0, "dt_obs": 0.05, "n_obs": 11, "steps_between_obs": 1 },
  "observations": { "n_observed": 3, "noise_variance": 0.2 },
  "schedule": { "rf0": 0.01, "alpha": 2.0, "beta_max": 5, "k_branches": 3 },
  "optimizer": { "max_iters": 300 },
  "output": { "forecast_steps": 10 }
}"#;

const MLP: &str = r#"{
  "model": { "kind": "mlp", "n_neurons": 3, "n_layers": 4, "m_pairs": 4 },
  "observations": { "n_observed": 3, "noise_variance": 0.0025 },
  "schedule": { "rf0_ratio": 1e-4, "alpha": 2.0, "beta_max": 6, "k_branches": 3 },
  "optimizer": { "max_iters": 300 },
  "output": { "m_predict": 7 }
}"#;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("config.json"), config).unwrap();
        Workspace { dir }
    }

    fn config(&self) -> PathBuf {
        self.dir.path().join("config.json")
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, cmd: &str, out: &str, seed: u64, extra: &[&str]) -> Output {
        let mut c = Command::new(env!("CARGO_BIN_EXE_assim"));
        c.arg(cmd)
            .arg("--config")
            .arg(self.config())
            .arg("--out")
            .arg(self.out(out))
            .arg("--seed")
            .arg(seed.to_string())
            .args(extra)
            .env("RUST_LOG", "warn");
        c.output().unwrap()
    }

    fn ok(&self, cmd: &str, out: &str, seed: u64, extra: &[&str]) {
        let o = self.run(cmd, out, seed, extra);
        assert!(o.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&o.stderr));
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn data_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(str::to_owned).collect()
}

fn output_hashes(manifest: &Path) -> Vec<(String, String)> {
    json(manifest)["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| (f["file"].as_str().unwrap().into(), f["sha256"].as_str().unwrap().into()))
        .collect()
}

#[test]
fn generate_and_anneal_are_reproducible() {
    let w = Workspace::new(LORENZ);
    for run in ["a", "b"] {
        w.ok("generate", run, 7, &[]);
        w.ok("anneal", run, 7, &["--jobs", "2"]);
    }
    for m in ["manifest.generate.json", "manifest.anneal.json"] {
        let a = output_hashes(&w.out("a").join(m));
        assert!(!a.is_empty());
        assert_eq!(a, output_hashes(&w.out("b").join(m)), "{m}");
    }
    w.ok("generate", "c", 8, &[]);
    assert_ne!(
        fs::read(w.out("a").join("observations.csv")).unwrap(),
        fs::read(w.out("c").join("observations.csv")).unwrap()
    );
}

#[test]
fn level_table_has_one_row_per_beta_and_branch() {
    let w = Workspace::new(LORENZ);
    w.ok("generate", "run", 1, &[]);
    w.ok("anneal", "run", 1, &[]);
    let rows = data_rows(&w.out("run").join("levels.csv"));
    assert_eq!(rows.len(), 6 * 3);
    let summary = json(&w.out("run").join("summary.json"));
    assert_eq!(summary["beta"], 5);
    assert_eq!(summary["param_estimate"].as_array().unwrap().len(), 1);
}

#[test]
fn single_branch_table() {
    let w = Workspace::new(&LORENZ.replace(r#""k_branches": 3"#, r#""k_branches": 1"#));
    w.ok("generate", "run", 2, &[]);
    w.ok("anneal", "run", 2, &[]);
    let rows = data_rows(&w.out("run").join("levels.csv"));
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.split(',').nth(2) == Some("0")));
    let summary = json(&w.out("run").join("summary.json"));
    assert_eq!(summary["levels"].as_array().unwrap().len(), 1);
}

#[test]
fn full_lorenz_pipeline() {
    let w = Workspace::new(LORENZ);
    for cmd in ["generate", "anneal", "predict", "elcheck"] {
        w.ok(cmd, "run", 3, &[]);
    }
    let dir = w.out("run");
    let forecast = data_rows(&dir.join("forecast.csv"));
    assert!(forecast.len() >= 11);
    assert!(dir.join("diagnostics.csv").is_file());
    let report = json(&dir.join("elcheck.json"));
    assert!(report["max_discrete_el_residual"].as_f64().unwrap().is_finite());
    for cmd in ["generate", "anneal", "predict", "elcheck"] {
        assert!(dir.join(format!("manifest.{cmd}.json")).is_file());
    }
}

#[test]
fn elcheck_on_truth_has_vanishing_discrete_diagnostics() {
    let w = Workspace::new(LORENZ);
    w.ok("generate", "run", 4, &[]);
    let truth = w.out("run").join("truth.csv");
    w.ok("elcheck", "run", 4, &["--path", truth.to_str().unwrap()]);
    let report = json(&w.out("run").join("elcheck.json"));
    assert!(report["max_discrete_momentum"].as_f64().unwrap() < 1e-9, "{report}");
}

#[test]
fn alpha_check_writes_comparison() {
    let w = Workspace::new(LORENZ);
    w.ok("generate", "run", 5, &[]);
    w.ok("anneal", "run", 5, &["--alpha-check", "1.5"]);
    let check = json(&w.out("run").join("alpha_check.json"));
    assert_eq!(check["alpha_check"], 1.5);
    assert_eq!(w.run("anneal", "run", 5, &["--alpha-check", "3"]).status.code(), Some(1));
}

#[test]
fn mlp_pipeline_writes_prediction_rows() {
    let w = Workspace::new(MLP);
    for cmd in ["generate", "anneal", "predict"] {
        w.ok(cmd, "run", 6, &[]);
    }
    let rows = data_rows(&w.out("run").join("prediction.csv"));
    let levels = json(&w.out("run").join("summary.json"))["levels"].as_array().unwrap().len();
    assert_eq!(rows.len(), levels.min(2));
    let first: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(&first[..4], &["0", "3", "4", "7"]);
    assert_eq!(w.run("elcheck", "run", 6, &[]).status.code(), Some(1));
}

#[test]
fn bad_configs_exit_with_one() {
    let w = Workspace::new("{ not json");
    let o = w.run("generate", "run", 1, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config error"));

    let w = Workspace::new(&LORENZ.replace(r#""alpha": 2.0"#, r#""alpha": 0.5"#));
    let o = w.run("generate", "run", 1, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpha must exceed 1"));

    let w = Workspace::new(LORENZ);
    let o = w.run("generate", "run", 1, &["--jobs", "0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_with_one() {
    let o = Command::new(env!("CARGO_BIN_EXE_assim")).arg("anneal").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = Command::new(env!("CARGO_BIN_EXE_assim")).arg("--help").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn runtime_failures_exit_with_two() {
    let w = Workspace::new(LORENZ);
    let o = w.run("anneal", "empty", 1, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing observations"));
}

#[test]
fn malformed_path_file_is_a_parse_error() {
    let w = Workspace::new(LORENZ);
    w.ok("generate", "run", 1, &[]);
    let bad = w.out("run").join("bad.csv");
    fs::write(&bad, "slot,time,x0\n0,0.0,abc\n").unwrap();
    let o = w.run("elcheck", "run", 1, &["--path", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("parse"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn empty_sweep_writes_header_only() {
    let w = Workspace::new(LORENZ);
    w.ok("sweep", "sweep", 1, &["--axis", "L", "--values", ""]);
    let text = fs::read_to_string(w.out("sweep").join("sweep_summary.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
}

#[test]
fn sweep_item_matches_standalone_run() {
    let w = Workspace::new(LORENZ);
    w.ok("sweep", "sweep", 9, &["--axis", "steps_between_obs", "--values", "0,2"]);
    let rows = data_rows(&w.out("sweep").join("sweep_summary.csv"));
    assert_eq!(rows.len(), 2);
    for row in &rows {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[0], "steps_between_obs");
        assert_eq!(cols[6], "ok");
    }
    let cols: Vec<String> = rows[1].split(',').map(str::to_owned).collect();
    let item_seed: u64 = cols[2].parse().unwrap();
    let item = w.out("sweep").join("steps_between_obs_2");

    let alone = Workspace::new(&fs::read_to_string(item.join("config.json")).unwrap());
    alone.ok("generate", "run", item_seed, &[]);
    alone.ok("anneal", "run", item_seed, &[]);
    for f in ["observations.csv", "levels.csv", "params.csv"] {
        assert_eq!(
            fs::read(item.join(f)).unwrap(),
            fs::read(alone.out("run").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn lorenz_sweep_rejects_network_axes() {
    let w = Workspace::new(LORENZ);
    let o = w.run("sweep", "sweep", 1, &["--axis", "M", "--values", "1,2"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn failing_sweep_item_is_recorded() {
    let w = Workspace::new(LORENZ);
    w.ok("sweep", "sweep", 1, &["--axis", "L", "--values", "2,9"]);
    let rows = data_rows(&w.out("sweep").join("sweep_summary.csv"));
    assert!(rows[0].ends_with(",ok"));
    assert!(rows[1].contains("error"), "{}", rows[1]);
}
