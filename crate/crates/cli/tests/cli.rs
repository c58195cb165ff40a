use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cocycle_core::{GridField, Mat};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cocycle-lab"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().unwrap()
}

fn report(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(format!("{name}.json"))).unwrap()).unwrap()
}

fn num(v: &Value, key: &str) -> f64 {
    v["summary"][key].as_f64().unwrap_or_else(|| panic!("{key} in {v}"))
}

#[test]
fn diagonal_bunching_product() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs().join("diag_bunching.cfg");
    let o = run(&["check-bunching", "--config", cfg.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(tmp.path(), "check-bunching");
    assert!((num(&r, "worst_product") - 0.6180).abs() < 1e-4);
    assert_eq!(r["summary"]["pointwise_ok"], Value::Bool(true));
    assert_eq!(r["seed"], 1);
    assert_eq!(r["samples"], Value::Null);
    assert_eq!(r["error"], Value::Null);
}

#[test]
fn constant_holonomy_is_exact() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs().join("diag_bunching.cfg");
    let o = run(&["holonomy", "--config", cfg.to_str().unwrap()], tmp.path());
    assert!(o.status.success());
    let r = report(tmp.path(), "holonomy");
    assert_eq!(num(&r, "max_h2_residual"), 0.0);
    assert_eq!(r["samples"], "holonomy_samples.csv");
    let csv = fs::read_to_string(tmp.path().join("holonomy_samples.csv")).unwrap();
    assert!(csv.starts_with("leg_type,x1,x2,t,n_used,residual\n"));
}

#[test]
fn reports_are_deterministic() {
    let cfg = configs().join("closed_form.cfg");
    let outputs: Vec<(String, String)> = (0..2)
        .map(|i| {
            let tmp = TempDir::new().unwrap();
            let threads = if i == 0 { "1" } else { "3" };
            let o = run(&["holonomy", "--config", cfg.to_str().unwrap(), "--threads", threads], tmp.path());
            assert!(o.status.success());
            (
                fs::read_to_string(tmp.path().join("holonomy.json")).unwrap(),
                fs::read_to_string(tmp.path().join("holonomy_samples.csv")).unwrap(),
            )
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn seed_override_and_csv_format() {
    let cfg = configs().join("diag_bunching.cfg");
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    run(&["holonomy", "--config", cfg.to_str().unwrap()], a.path());
    run(&["holonomy", "--config", cfg.to_str().unwrap(), "--seed", "9"], b.path());
    let (ra, rb) = (report(a.path(), "holonomy"), report(b.path(), "holonomy"));
    assert_eq!(rb["seed"], 9);
    assert_ne!(ra["config_digest"], rb["config_digest"]);
    let c = TempDir::new().unwrap();
    run(&["holonomy", "--config", cfg.to_str().unwrap(), "--format", "csv"], c.path());
    let csv = fs::read_to_string(c.path().join("holonomy.csv")).unwrap();
    assert!(csv.contains(&format!("config_digest,{}", ra["config_digest"].as_str().unwrap())));
}

#[test]
fn triangular_demo_thresholds() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs().join("triangular.cfg");
    let o = run(&["demo-triangular", "--config", cfg.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(tmp.path(), "demo-triangular");
    assert!(num(&r, "stable_intertwine") < 1e-7);
    assert!(num(&r, "unstable_intertwine") > 1e-3);
    assert!(num(&r, "cycle_defect") > 1e-3);
    assert!(num(&r, "oracle_max_error") < 1e-10);
    assert!(num(&r, "gauge_change") < 1e-12);
    let r_hat = num(&r, "r_hat_unstable");
    assert!(r_hat > 0.4 && r_hat < 0.6, "{r_hat}");
}

#[test]
fn perturbed_demo_splitting() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs().join("perturbed.cfg");
    let o = run(&["demo-perturbed", "--config", cfg.to_str().unwrap()], tmp.path());
    assert!(o.status.success());
    let r = report(tmp.path(), "demo-perturbed");
    assert!(num(&r, "gap") > 1.0);
    assert!(num(&r, "invariance_residual") < 1e-9);
}

#[test]
fn library_failure_exits_3_with_report() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs().join("divergent.cfg");
    let o = run(&["holonomy", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(3));
    let r = report(tmp.path(), "holonomy");
    assert_eq!(r["error"]["name"], "Diverged");
}

#[test]
fn bad_config_exits_2() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.cfg");
    fs::write(&bad, "[cocycle]\nkind = constant\nentry_0_0 = 1\n").unwrap();
    let o = run(&["holonomy", "--config", bad.to_str().unwrap()], &tmp.path().join("o"));
    assert_eq!(o.status.code(), Some(2));
    fs::write(&bad, "[base]\nmatrix = 1 1 0 1\n").unwrap();
    let o = run(&["holonomy", "--config", bad.to_str().unwrap()], &tmp.path().join("o"));
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["holonomy", "--config", "/nonexistent.cfg"], &tmp.path().join("o"));
    assert_eq!(o.status.code(), Some(2));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn grid_file_relative_to_config() {
    let tmp = TempDir::new().unwrap();
    let n = 8;
    let nodes: Vec<Mat> = (0..n * n)
        .map(|k| Mat::from_row_slice(2, 2, &[1.3, 0.01 * (k % n) as f64, 0.0, 1.0]))
        .collect();
    let g = GridField::new(2, n, n, nodes).unwrap();
    fs::write(tmp.path().join("a.grid"), g.to_text()).unwrap();
    let cfg = tmp.path().join("grid.cfg");
    fs::write(&cfg, "[cocycle]\nkind = grid\nfile = a.grid\n[run]\nsamples = 10\n").unwrap();
    let o = run(&["cycle-weights", "--config", cfg.to_str().unwrap()], &tmp.path().join("o"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&tmp.path().join("o"), "cycle-weights");
    assert_eq!(num(&r, "n_cycles"), 10.0);
}
