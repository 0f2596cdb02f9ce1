use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn smoke() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn fxmm(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fxmm"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("FXMM_SEED")
        .output()
        .expect("binary runs")
}

fn smoke_run(out: &Path, args: &[&str]) -> Output {
    let cfg = smoke();
    let mut all = vec!["--config", cfg.to_str().unwrap()];
    all.extend_from_slice(args);
    let o = fxmm(out, &all);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

/// Compare against `tests/golden/<prefix>_<file>`; `FXMM_BLESS=1` rewrites them.
fn check_golden(out: &Path, prefix: &str, files: &[&str]) {
    for f in files {
        let got = fs::read(out.join(f)).unwrap();
        let path = golden_dir().join(format!("{prefix}_{f}"));
        if std::env::var_os("FXMM_BLESS").is_some() {
            fs::write(&path, &got).unwrap();
            continue;
        }
        let want = fs::read(&path).unwrap_or_else(|_| panic!("missing golden {}", path.display()));
        assert!(got == want, "{} differs from {}", f, path.display());
    }
}

#[test]
fn solve_transient_matches_golden() {
    let d = tempfile::tempdir().unwrap();
    smoke_run(d.path(), &["solve"]);
    check_golden(d.path(), "transient", &["controls.csv", "value.csv", "fig1.csv", "fig2.csv"]);
}

#[test]
fn solve_baseline_matches_golden() {
    let d = tempfile::tempdir().unwrap();
    smoke_run(d.path(), &["solve", "--mode", "baseline"]);
    check_golden(d.path(), "baseline", &["controls.csv", "value.csv", "fig1.csv"]);
    assert!(!d.path().join("fig2.csv").exists());
    let header = fs::read_to_string(d.path().join("fig1.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap(), "x,q,ask,approx_ask");
}

#[test]
fn simulate_matches_golden() {
    let d = tempfile::tempdir().unwrap();
    smoke_run(d.path(), &["simulate", "--compare-ac"]);
    check_golden(d.path(), "simulate", &["paths_transient.csv", "paths_ac.csv"]);
}

#[test]
fn coeffs_and_sweep_match_golden() {
    let d = tempfile::tempdir().unwrap();
    smoke_run(d.path(), &["coeffs"]);
    smoke_run(d.path(), &["sweep", "--param", "psi", "--values", "0.1,0.2,0.4"]);
    check_golden(d.path(), "smoke", &["coeffs.json", "sweep.csv"]);
}

#[test]
fn default_config_reports_fx_example() {
    let d = tempfile::tempdir().unwrap();
    let o = fxmm(d.path(), &["coeffs"]);
    assert!(o.status.success());
    let r: Value = serde_json::from_str(&fs::read_to_string(d.path().join("coeffs.json")).unwrap()).unwrap();
    let omega = r["coeffs"]["omega"].as_f64().unwrap();
    assert!((omega - 560.0).abs() < 5.0, "{omega}");
    assert!((r["top_of_book_spread"].as_f64().unwrap() - 0.5).abs() < 0.05);
    assert!((r["client_turnover"].as_f64().unwrap() - 5000.0).abs() < 600.0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("omega"));
    assert!(manifest(d.path())["config"]["path"].is_null());
}

#[test]
fn zero_paths_is_an_error() {
    let d = tempfile::tempdir().unwrap();
    let cfg = smoke();
    let o = fxmm(d.path(), &["--config", cfg.to_str().unwrap(), "simulate", "--paths", "0"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("at least 1 path"));
    let m = manifest(d.path());
    assert_eq!(m["status"], "failed");
    assert!(m["failure"].as_str().unwrap().contains("at least 1 path"));
}

#[test]
fn same_seed_same_bytes_across_thread_counts() {
    let runs: Vec<_> = ["1", "4", "4"]
        .iter()
        .map(|t| {
            let d = tempfile::tempdir().unwrap();
            smoke_run(d.path(), &["--threads", t, "simulate", "--seed", "42"]);
            d
        })
        .collect();
    let read = |d: &tempfile::TempDir| fs::read(d.path().join("paths_transient.csv")).unwrap();
    assert_eq!(read(&runs[0]), read(&runs[1]));
    assert_eq!(read(&runs[1]), read(&runs[2]));
    assert_eq!(manifest(runs[0].path())["seed"], 42);
}

#[test]
fn manifest_lists_every_artifact() {
    let d = tempfile::tempdir().unwrap();
    smoke_run(d.path(), &["solve", "--gnuplot"]);
    let m = manifest(d.path());
    let listed: Vec<&str> = m["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["path"].as_str().unwrap())
        .collect();
    let mut on_disk: Vec<String> = fs::read_dir(d.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    let mut sorted = listed.clone();
    sorted.sort();
    assert_eq!(sorted, on_disk);
    for a in m["artifacts"].as_array().unwrap() {
        let bytes = fs::read(d.path().join(a["path"].as_str().unwrap())).unwrap();
        assert_eq!(a["bytes"], bytes.len() as u64);
        assert_eq!(a["sha256"].as_str().unwrap().len(), 64);
    }
    assert_eq!(m["status"], "ok");
    assert_eq!(m["checks"]["transient_stationary"], true);
    assert_eq!(m["checks"]["transient_symmetric"], true);
}

#[test]
fn ac_mode_zeroes_beta_only_in_the_solve() {
    let d = tempfile::tempdir().unwrap();
    smoke_run(d.path(), &["solve", "--mode", "ac"]);
    let s: Value = serde_json::from_str(&fs::read_to_string(d.path().join("solve.json")).unwrap()).unwrap();
    assert_eq!(s["coeffs"]["b0"], 0.0);
    assert_eq!(manifest(d.path())["params"]["beta"], 1000.0);
}

#[test]
fn non_stationary_solve_fails_with_reason() {
    let d = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(smoke()).unwrap().replace("horizon = 0.03", "horizon = 0.001");
    let cfg = d.path().join("short.toml");
    fs::write(&cfg, text).unwrap();
    let o = fxmm(&d.path().join("out"), &["--config", cfg.to_str().unwrap(), "solve"]);
    assert_eq!(o.status.code(), Some(1));
    let m = manifest(&d.path().join("out"));
    assert_eq!(m["failure"], "check failed: transient_stationary");
    assert!(d.path().join("out/controls.csv").exists());
}

#[test]
fn bad_input_exits_with_code_2() {
    let d = tempfile::tempdir().unwrap();
    let o = fxmm(d.path(), &["sweep", "--param", "lambda", "--values", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let cfg = d.path().join("bad.toml");
    fs::write(&cfg, fs::read_to_string(smoke()).unwrap().replace("psi = 0.2", "psi = -0.2")).unwrap();
    let o = fxmm(d.path(), &["--config", cfg.to_str().unwrap(), "coeffs"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("psi"));
}

fn sweep(param: &str, values: &[f64]) -> Vec<Vec<f64>> {
    let d = tempfile::tempdir().unwrap();
    let list: Vec<String> = values.iter().map(|v| format!("{v}")).collect();
    smoke_run(d.path(), &["sweep", "--param", param, "--values", &list.join(",")]);
    let text = fs::read_to_string(d.path().join("sweep.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "param,value,xi,a0,omega,b0,zone_half_width,top_of_book_spread"
    );
    lines
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn sweep_beta_loading() {
    let omega = sweep("beta", &[0.0])[0][3];
    let rows = sweep("β", &[0.0, omega, 1e6]);
    assert_eq!(rows[0][4], 0.0);
    assert_eq!(rows[1][4], 0.5);
    assert!(rows[2][4] > 0.99);
}

#[test]
fn sweep_gamma_scales_omega() {
    let rows = sweep("gamma", &[1e-3, 4e-3]);
    assert!((rows[1][3] / rows[0][3] - 2.0).abs() < 1e-12);
}

#[test]
fn sweep_psi_zone_is_linear() {
    let rows = sweep("psi", &[0.1, 0.2, 0.3]);
    let w: Vec<f64> = rows.iter().map(|r| r[5]).collect();
    assert!((w[1] / w[0] - 2.0).abs() < 1e-12);
    assert!((w[2] / w[0] - 3.0).abs() < 1e-12);
}
