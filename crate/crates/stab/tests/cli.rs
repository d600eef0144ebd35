//! End-to-end checks of the `stab` binary: exit codes, artifact layout, and
//! the documented command surface.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stab"))
}

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn tiny_local_scenario(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        r#"
schema_version = 1
seed = 3
mode = "local"

[space]
dim = 2
particles = 16

[field]
label = "linear_steer"

[controls]
axis_max_norm = 1.0

[clp]
kind = "builtin_quadratic"

[initial]
kind = "gaussian"
normalize_w2 = 1.5

[radii]
r = 0.25
R = 2.0

[partition]
rule = "uniform"
delta_max = 0.1
horizon = 2.5

{extra}
"#
    );
    let path = dir.join("scenario.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn simulate_pass_writes_artifacts_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_local_scenario(
        dir.path(),
        "[feedback]\nsource = \"override\"\nkappa = 0.5\neps = 1e-3\nprobe_count = 8\n\n[output]\nsnapshot_stride = 10",
    );
    let out = dir.path().join("run");
    let status = bin()
        .args(["simulate", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("trajectory.csv").exists());
    assert!(out.join("report.json").exists());
    assert!(out.join("measures").join("measure_000000.csv").exists());

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["all_pass"], true);
    assert_eq!(report["revalidated"], true);
    assert!(report["moduli"]["S"].is_number());
    assert!(report["constants"]["delta"].is_number());
}

#[test]
fn failing_verdict_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_local_scenario(dir.path(), "[feedback]\nsource = \"constant\"\ncontrol_index = 1");
    let status = bin()
        .args([
            "simulate",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join("run").to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn configuration_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    // r >= R.
    let bad = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(tiny_local_scenario(
        dir.path(),
        "[feedback]\nsource = \"override\"\nkappa = 0.5\neps = 1e-3",
    ))
    .unwrap()
    .replace("r = 0.25", "r = 3.0");
    std::fs::write(&bad, text).unwrap();
    let status = bin()
        .args(["simulate", bad.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));

    // Unknown field label must list the supported ones.
    let worse = dir.path().join("worse.toml");
    let text = std::fs::read_to_string(dir.path().join("scenario.toml"))
        .unwrap()
        .replace("linear_steer", "vortex");
    std::fs::write(&worse, text).unwrap();
    let output = bin()
        .args(["simulate", worse.to_str().unwrap(), "--out", dir.path().join("o2").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("mean_attract"), "stderr: {err}");
}

#[test]
fn numerical_non_convergence_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    // kappa far below the double-precision cancellation floor of the
    // envelope gradient: the descent cannot reach its threshold.
    let cfg = tiny_local_scenario(
        dir.path(),
        "[feedback]\nsource = \"override\"\nkappa = 1e-5\neps = 1e-12\nprobe_count = 8",
    );
    let status = bin()
        .args([
            "simulate",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join("run").to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));
    // Partial artifacts are preserved.
    assert!(dir.path().join("run").join("report.json").exists());
    assert!(dir.path().join("run").join("trajectory.csv").exists());
}

#[test]
fn verify_transport_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_local_scenario(
        dir.path(),
        "[feedback]\nsource = \"override\"\nkappa = 0.5\neps = 1e-3",
    );
    let output = bin()
        .args([
            "verify",
            cfg.to_str().unwrap(),
            "--suite",
            "transport",
            "--out",
            dir.path().join("v").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("transport_oracle"));
    assert!(stdout.contains("overall: PASS"));
}

#[test]
fn sabotaged_constants_fail_the_lemmas_suite() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let status = bin()
        .args([
            "verify",
            scenario_path("negative_sabotaged_c0.toml").to_str().unwrap(),
            "--suite",
            "lemmas",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    // The report is still written on failure.
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let failed: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["pass"] == false)
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert!(failed.contains(&"step_bound"), "failed: {failed:?}");
}

#[test]
fn shells_dump_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("shells");
    let status = bin()
        .args([
            "shells",
            scenario_path("linear_steer_global.toml").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let rows = stab::stabilize::read_shells_csv(&out.join("shells.csv")).unwrap();
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().all(|r| r.7), "nesting invariant column");
    // Reload-rewrite stability: parse and compare the formatted columns.
    let text = std::fs::read_to_string(out.join("shells.csv")).unwrap();
    for (line, row) in text.lines().skip(1).zip(&rows) {
        let q: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(q, row.1);
    }
}

#[test]
fn empty_sweep_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_local_scenario(
        dir.path(),
        "[feedback]\nsource = \"override\"\nkappa = 0.5\neps = 1e-3",
    );
    let out = dir.path().join("sweep");
    let status = bin()
        .args([
            "sweep",
            cfg.to_str().unwrap(),
            "--axis",
            "kappa",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let text = std::fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert_eq!(text.lines().count(), 1, "header only");
}
