use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use smartsize::io::save_dataset;
use smartsize_core::sim::{draw_dataset, GenerativeModel, ModelKind};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_smartsize"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn pilot(dir: &Path, seed: u64) {
    let m = GenerativeModel::scenario(ModelKind::QuadraticT3, 1.0).unwrap();
    save_dataset(&draw_dataset(&m, 50, seed).unwrap(), &dir.join("pilot.csv")).unwrap();
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const PROJECTION: &str = r#"
procedure = "projection"
pilot = "pilot.csv"
seed = 17

[targets]
b0 = B0
eta = 1.0

[projection]
reps = 12
grid = [50, 100, 200]

[projection.search]
m2 = 8
m1 = 4
refine_rounds = 1
"#;

#[test]
fn size_normal_elicited() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.toml",
        "procedure = \"normal\"\n[targets]\nb0 = 0.0\neta = 1.0\n[sigma]\nmethod = \"elicited\"\nvalue = 1.0\n",
    );
    let out = dir.path().join("report.json");
    let o = run(&["size", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out);
    assert_eq!(r["result"]["n"], 9);
    assert_eq!(r["result"]["criterion"], "pow");
    assert_eq!(r["seed"], 3);
    assert_eq!(r["config"]["seed"], 3);
    assert!(r["version"].is_string());
    assert!(r["diagnostics"].is_object());
}

#[test]
fn both_is_max_of_pow_and_opt() {
    let dir = tempfile::tempdir().unwrap();
    let mut sizes = Vec::new();
    for c in ["pow", "opt", "both"] {
        let cfg = write(
            dir.path(),
            "run.toml",
            &format!("procedure = \"normal\"\ncriterion = \"{c}\"\n[targets]\nb0 = 0.0\neta = 0.4\nepsilon = 0.2\n[sigma]\nmethod = \"elicited\"\nvalue = 1.3\n"),
        );
        let o = run(&["size", "--config", cfg.to_str().unwrap(), "--seed", "1"]);
        let r: Value = serde_json::from_slice(&o.stdout).unwrap();
        sizes.push(r["result"]["n"].as_u64().unwrap());
    }
    assert_eq!(sizes[2], sizes[0].max(sizes[1]));
}

#[test]
fn no_benefit_exits_with_sentinel() {
    let dir = tempfile::tempdir().unwrap();
    pilot(dir.path(), 2);
    let cfg = write(dir.path(), "run.toml", &PROJECTION.replace("B0", "100.0"));
    let o = run(&["size", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("infinite"));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["result"]["n"], "infinite");
}

#[test]
fn report_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    pilot(dir.path(), 3);
    let cfg = write(dir.path(), "run.toml", &PROJECTION.replace("B0", "2.0"));
    let a = run(&["size", "--config", cfg.to_str().unwrap(), "--threads", "1"]);
    let b = run(&["size", "--config", cfg.to_str().unwrap(), "--threads", "3"]);
    assert!(a.status.code() == Some(0) || a.status.code() == Some(2));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.status.code(), b.status.code());
}

#[test]
fn report_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    pilot(dir.path(), 4);
    let cfg = write(dir.path(), "run.toml", &PROJECTION.replace("B0", "2.0"));
    let first = run(&["size", "--config", cfg.to_str().unwrap()]);
    let r: Value = serde_json::from_slice(&first.stdout).unwrap();
    let again = write(dir.path(), "again.json", &r["config"].to_string());
    let second = run(&["size", "--config", again.to_str().unwrap()]);
    let r2: Value = serde_json::from_slice(&second.stdout).unwrap();
    assert_eq!(r["result"], r2["result"]);
}

#[test]
fn power_curve_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    pilot(dir.path(), 5);
    let cfg = write(dir.path(), "run.toml", &PROJECTION.replace("B0", "2.0"));
    let out = dir.path().join("curve.csv");
    let o = run(&["power-curve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,raw_power,fitted_power");
    assert_eq!(lines.len(), 4);
    let side = json(&dir.path().join("curve.json"));
    assert_eq!(side["grid"], serde_json::json!([50, 100, 200]));
    assert_eq!(side["raw_power"].as_array().unwrap().len(), 3);
}

#[test]
fn simulate_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sim.toml",
        r#"
seed = 9
[experiment]
model = "normal-an"
deltas = [1.0]
reps = 10
nu_draws = 2000
sigma_boot_reps = 20
trial_sigma_reps = 20
[experiment.oracle]
fixed_draws = 20000
regime_draws = 20000
known_sigma = [2.5]
"#,
    );
    let out = dir.path().join("out");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out.join("report.json"));
    let rows = r["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(r["seed"], 9);
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("model,delta,procedure,criterion,sigma_method"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", "procedure = \"normal\"\n[targets]\nb0 = 0.0\neta = 1.0\n");
    let o = run(&["size", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sigma"));
    let o = run(&["size", "--config", "/nonexistent/run.toml"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["size", "--config", cfg.to_str().unwrap(), "--threads", "0"]);
    assert_eq!(o.status.code(), Some(1));
}
