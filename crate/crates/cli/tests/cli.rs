use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_causal-pm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

/// Runs `command` with the config text and returns the output directory.
fn run_ok(dir: &TempDir, command: &str, config: &str, extra: &[&str]) -> PathBuf {
    let cfg = write_config(dir.path(), &format!("{command}.toml"), config);
    let out = dir.path().join(format!("out-{}", extra.join("_").replace('-', "")));
    let mut args = vec![command, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert!(o.status.success(), "{command} failed: {}", String::from_utf8_lossy(&o.stderr));
    out
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn header(text: &str) -> Vec<&str> {
    text.lines().nth(1).unwrap().split(',').collect()
}

fn data_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(2).map(|l| l.split(',').map(str::to_owned).collect()).collect()
}

const ERROR_PROB: &str = r#"
experiment = "error-prob"
p = [0.1]
n = [3]
horizon = 12
trials = 40
seed = 5
conditional = true
"#;

#[test]
fn exponent_sweep_writes_table_and_metadata() {
    let dir = TempDir::new().unwrap();
    let out = run_ok(&dir, "exponent-sweep", "p = [0.05, 0.1]\nn = \"1..=8\"\n", &[]);
    let csv = read(&out.join("exponent-sweep.csv"));
    assert!(csv.starts_with("# config_hash="));
    assert!(csv.lines().next().unwrap().contains(" seeds="));
    assert_eq!(
        header(&csv),
        ["p", "n", "inv_n", "beta", "lambda_star", "residual", "max_log_alpha", "alpha"]
    );
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 16);
    // beta(n) does not exist at p = 0.1 for small n; its cells are empty
    let small = rows.iter().find(|r| r[0] == "0.1" && r[1] == "1").unwrap();
    assert_eq!(small[3], "");
    let meta: serde_json::Value = serde_json::from_str(&read(&out.join("exponent-sweep.json"))).unwrap();
    assert_eq!(meta["command"], "exponent-sweep");
    assert_eq!(meta["outputs"][0]["rows"], 16);
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn alpha_approaches_one_near_useless_channel() {
    let dir = TempDir::new().unwrap();
    let out = run_ok(&dir, "alpha-vs-p", "p = [0.1, 0.499]\n", &[]);
    let csv = read(&out.join("alpha-vs-p.csv"));
    let cols = header(&csv);
    let alpha_col = cols.iter().position(|c| *c == "alpha_analytic").unwrap();
    let rows = data_rows(&csv);
    let noisy: f64 = rows[1][alpha_col].parse().unwrap();
    let clean: f64 = rows[0][alpha_col].parse().unwrap();
    assert!(noisy >= 1.0 && noisy < 1.0 + 1e-4, "alpha at p = 0.499 is {noisy}");
    assert!(clean > noisy);
}

#[test]
fn error_prob_is_deterministic_across_worker_counts() {
    let dir = TempDir::new().unwrap();
    let one = run_ok(&dir, "error-prob", ERROR_PROB, &["--workers", "1"]);
    let two = run_ok(&dir, "error-prob", ERROR_PROB, &["--workers", "3"]);
    let again = run_ok(&dir, "error-prob", ERROR_PROB, &[]);
    for name in ["error-prob.csv", "error-prob-delay.csv"] {
        let a = read(&one.join(name));
        assert_eq!(a, read(&two.join(name)), "{name}");
        assert_eq!(a, read(&again.join(name)), "{name}");
    }
    let csv = read(&one.join("error-prob.csv"));
    assert!(csv.lines().next().unwrap().ends_with("seeds=master:5/trials:40"));
    assert_eq!(
        header(&csv),
        ["p", "n", "t", "j", "errors", "trials", "empirical_error", "bound_value"]
    );
    for row in data_rows(&csv) {
        let rate: f64 = row[6].parse().unwrap();
        assert!((0.0..=1.0).contains(&rate));
    }
}

#[test]
fn seed_override_changes_label_and_hash() {
    let dir = TempDir::new().unwrap();
    let base = run_ok(&dir, "error-prob", ERROR_PROB, &[]);
    let other = run_ok(&dir, "error-prob", ERROR_PROB, &["--seed", "6"]);
    let a = read(&base.join("error-prob.csv"));
    let b = read(&other.join("error-prob.csv"));
    assert!(b.lines().next().unwrap().ends_with("seeds=master:6/trials:40"));
    assert_ne!(a.lines().next(), b.lines().next());
}

#[test]
fn zero_trials_writes_header_only() {
    let dir = TempDir::new().unwrap();
    let out = run_ok(&dir, "error-prob", ERROR_PROB, &["--trials", "0"]);
    let csv = read(&out.join("error-prob.csv"));
    assert_eq!(csv.lines().count(), 2);
    assert_eq!(header(&csv)[0], "p");
}

#[test]
fn control_sim_grid_and_trajectory() {
    let dir = TempDir::new().unwrap();
    let config = r#"
experiment = "control-sim"
p = [0.05]
n = [10]
alpha = [1.01]
horizon = 60
trials = 2
record_steps = true
"#;
    let out = run_ok(&dir, "control-sim", config, &[]);
    let summary = read(&out.join("control-sim.csv"));
    assert_eq!(data_rows(&summary).len(), 1);
    let traj = read(&out.join("control-trajectory.csv"));
    assert!(data_rows(&traj).len() >= 60);
}

fn exit_code(dir: &TempDir, command: &str, config: &str) -> i32 {
    let cfg = write_config(dir.path(), "bad.toml", config);
    let out = dir.path().join("bad-out");
    let o = run(&[command, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!o.stderr.is_empty());
    o.status.code().unwrap()
}

#[test]
fn config_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    assert_eq!(exit_code(&dir, "exponent-sweep", "bogus = 1\n"), 2);
    assert_eq!(exit_code(&dir, "exponent-sweep", "p = [0.6]\nn = [1]\n"), 2);
    assert_eq!(exit_code(&dir, "exponent-sweep", "p = [0.1]\nn = \"5..5\"\n"), 2);
    assert_eq!(exit_code(&dir, "error-prob", "experiment = \"alpha-vs-p\"\np = [0.1]\n"), 2);
    assert_eq!(exit_code(&dir, "error-prob", "p = [0.1]\nn = [3]\nlambda = 1.5\n"), 2);
    assert_eq!(exit_code(&dir, "alpha-vs-p", "p = [0.1]\neta = 0.5\n"), 2);
}

#[test]
fn missing_config_exits_with_one() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.toml");
    let o = run(&["exponent-sweep", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn zero_workers_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "p = [0.1]\nn = [1]\n");
    let out = dir.path().join("o");
    let o = run(&[
        "exponent-sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--workers",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(2));
}
