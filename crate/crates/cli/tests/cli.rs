use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn crossdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crossdiff")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn error_line(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    serde_json::from_str(stderr.trim()).unwrap()
}

fn csv_values(text: &str, column: &str) -> Vec<String> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == column).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

#[test]
fn validate_reports_alpha_zero_boundary() {
    let out = crossdiff(&["validate", "--config", path(&fixture("alpha_zero_boundary.cfg"))]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["regime"], "AlphaZeroBoundary");
}

#[test]
fn validate_rejects_inadmissible_exponents() {
    let out = crossdiff(&["validate", "--config", path(&fixture("inadmissible.cfg"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_line(&out);
    assert_eq!(err["error"], "inadmissible");
    assert!(err["reason"].as_str().unwrap().contains("d >= 2 + alpha"));
}

#[test]
fn usage_and_missing_config_errors_exit_2() {
    let out = crossdiff(&["run", "--config", "/nonexistent/x.cfg", "--out", "/tmp/never"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "config");
    let out = crossdiff(&["sweep", "--config", path(&fixture("homogeneous.cfg")), "--axis", "space"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "usage");
}

#[test]
fn equilibrium_run_passes_every_monitor() {
    let dir = tempfile::tempdir().unwrap();
    let out = crossdiff(&["run", "--config", path(&fixture("equilibrium.cfg")), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["all_pass"], true);
    for a in manifest["artifacts"].as_array().unwrap() {
        assert!(dir.path().join(a.as_str().unwrap()).exists(), "{a}");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let monitors = summary["monitors"].as_object().unwrap();
    assert!(monitors.values().all(|m| m["status"] != "fail"));
    assert!(monitors["max_v"]["worst_margin"].as_f64().unwrap() <= 1e-12);

    // N = 50 is below the 100-snapshot budget, so every step is stored.
    let index = fs::read_to_string(dir.path().join("snapshots/index.csv")).unwrap();
    assert_eq!(index.lines().count(), 52);
}

#[test]
fn snapshots_are_thinned_for_long_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("long.cfg");
    let text = fs::read_to_string(fixture("equilibrium.cfg")).unwrap();
    fs::write(&cfg, text.replace("N = 50", "N = 250").replace("n = 32", "n = 8")).unwrap();
    let run_dir = dir.path().join("run");
    let out = crossdiff(&["run", "--config", path(&cfg), "--out", path(&run_dir)]);
    assert_eq!(out.status.code(), Some(0));
    let index = fs::read_to_string(run_dir.join("snapshots/index.csv")).unwrap();
    let steps = csv_values(&index, "step");
    assert_eq!(steps.first().unwrap(), "0");
    assert_eq!(steps.last().unwrap(), "250");
    assert_eq!(steps[1], "3");

    let out = crossdiff(&["diagnose", path(&run_dir)]);
    assert_eq!(out.status.code(), Some(0));
    let summary = fs::read_to_string(run_dir.join("diagnose/summary.json")).unwrap();
    let summary: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(summary["snapshot_resolution"], true);
}

#[test]
fn diagnose_reproduces_run_monitors() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let out = crossdiff(&["run", "--config", path(&fixture("bump.cfg")), "--out", path(&run_dir), "--seed", "11"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = crossdiff(&["diagnose", path(&run_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let mut compared = 0;
    for entry in fs::read_dir(run_dir.join("monitors")).unwrap() {
        let name = entry.unwrap().file_name();
        let online = fs::read_to_string(run_dir.join("monitors").join(&name)).unwrap();
        let offline = fs::read_to_string(run_dir.join("diagnose/monitors").join(&name)).unwrap();
        let a = csv_values(&online, "value");
        let b = csv_values(&offline, "value");
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            let (x, y): (f64, f64) = (x.parse().unwrap(), y.parse().unwrap());
            assert!((x - y).abs() <= 1e-14 * (1.0 + x.abs()), "{name:?}: {x} vs {y}");
        }
        compared += 1;
    }
    assert!(compared >= 8);
}

#[test]
fn tau_sweep_shows_first_order_ode_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = crossdiff(&[
        "sweep",
        "--config",
        path(&fixture("homogeneous.cfg")),
        "--axis",
        "tau",
        "--levels",
        "1e-2,5e-3,2.5e-3",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("sweep_tau.csv")).unwrap();
    assert!(table.ends_with('\n'));
    let ratios = csv_values(&table, "ode_error_ratio");
    assert_eq!(ratios[0], "");
    for r in &ratios[1..] {
        let r: f64 = r.parse().unwrap();
        assert!((1.7..=2.3).contains(&r), "{r}");
    }
    assert_eq!(csv_values(&table, "N"), ["100", "200", "400"]);
}

#[test]
fn sweep_rejects_levels_that_do_not_divide_the_horizon() {
    let out = crossdiff(&["sweep", "--config", path(&fixture("homogeneous.cfg")), "--axis", "tau", "--levels", "0.3"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "levels");
}

#[test]
fn d_beta_sweep_writes_one_row_per_level() {
    let out = crossdiff(&["sweep", "--config", path(&fixture("bump.cfg")), "--axis", "d-beta", "--levels", "0.1,1,5"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv_values(&table, "level"), ["0.1", "1", "5"]);
    assert!(csv_values(&table, "ode_error").iter().all(|e| e.is_empty()));
}
