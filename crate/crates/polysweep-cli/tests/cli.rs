//! End-to-end checks of the command-line interface: exit codes, artifact
//! formats, and the canonical JSON round trip.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_polysweep"))
}

fn tmpdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("polysweep-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn read_csv_row(path: &Path, col: &str, row: usize) -> f64 {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == col).unwrap();
    let line = lines.nth(row).unwrap();
    line.split(',').nth(idx).unwrap().parse().unwrap()
}

#[test]
fn example8_passes_and_writes_artifacts() {
    let dir = tmpdir("ex8");
    let out = bin()
        .args(["--out-dir", dir.to_str().unwrap(), "example8"])
        .output()
        .unwrap();
    assert!(out.status.success(), "stdout: {}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("certificate_lambda_positive: pass"));

    // Trajectory endpoints: boundary hit at the midpoint, published final
    // state at the horizon.
    let traj = dir.join("example8_trajectory.csv");
    assert!((read_csv_row(&traj, "x1", 1) - 1.0).abs() < 1e-12);
    assert!((read_csv_row(&traj, "x2", 1) - 0.5).abs() < 1e-12);
    assert!((read_csv_row(&traj, "x1", 2) - 0.82).abs() < 1e-10);
    assert!((read_csv_row(&traj, "x2", 2) - 0.59).abs() < 1e-10);

    // Cost table carries both analyzed branches.
    let table = fs::read_to_string(dir.join("example8_cost_table.csv")).unwrap();
    assert!(table.lines().any(|l| l.starts_with("interior_stationary")
        && l.contains("2.2050000000000")));
    assert!(table.lines().any(|l| l.starts_with("tangential") && l.contains("2.2083333333333")));

    // Canonical JSON round trip is byte-identical.
    let ppath = dir.join("example8_problem.json");
    let bytes = fs::read_to_string(&ppath).unwrap();
    let parsed: polysweep::sweeping::SweepingProblem = serde_json::from_str(&bytes).unwrap();
    let rewritten = polysweep::jsonio::to_canonical_json(&parsed).unwrap();
    assert_eq!(bytes, rewritten);
}

#[test]
fn example8_case_1_reports_tangential_branch_only() {
    let dir = tmpdir("ex8c1");
    let out = bin()
        .args(["--out-dir", dir.to_str().unwrap(), "example8", "--case", "1"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let table = fs::read_to_string(dir.join("example8_cost_table.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).filter(|l| !l.is_empty()).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("tangential"));
}

#[test]
fn simulate_reproduces_endpoint() {
    let dir = tmpdir("sim");
    // Produce the problem artifact first.
    assert!(bin()
        .args(["--out-dir", dir.to_str().unwrap(), "example8"])
        .status()
        .unwrap()
        .success());
    let controls = serde_json::json!({"u": [[-1.0, -1.0], [-0.4, 0.1]]});
    let cpath = dir.join("controls.json");
    fs::write(&cpath, controls.to_string()).unwrap();
    let out = bin()
        .args([
            "--out-dir",
            dir.to_str().unwrap(),
            "simulate",
            "--problem",
            dir.join("example8_problem.json").to_str().unwrap(),
            "--controls",
            cpath.to_str().unwrap(),
            "--out",
            "sim.csv",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let traj = dir.join("sim.csv");
    let header = fs::read_to_string(&traj).unwrap();
    assert!(header.starts_with("t,x1,x2,eta1,u1,u2"));
    assert!((read_csv_row(&traj, "x1", 2) - 0.82).abs() < 1e-12);
    assert!((read_csv_row(&traj, "x2", 2) - 0.59).abs() < 1e-12);
    assert!((read_csv_row(&traj, "eta1", 1) - 0.04).abs() < 1e-12);
}

#[test]
fn certify_rejects_the_tangential_candidate() {
    let dir = tmpdir("cert");
    assert!(bin()
        .args(["--out-dir", dir.to_str().unwrap(), "example8"])
        .status()
        .unwrap()
        .success());
    // Simulate the tangential candidate and certify from its CSV.
    let controls = serde_json::json!({"u": [[-1.0, -1.0], [-1.0/3.0, 1.0/6.0]]});
    let cpath = dir.join("tangential.json");
    fs::write(&cpath, controls.to_string()).unwrap();
    assert!(bin()
        .args([
            "--out-dir",
            dir.to_str().unwrap(),
            "simulate",
            "--problem",
            dir.join("example8_problem.json").to_str().unwrap(),
            "--controls",
            cpath.to_str().unwrap(),
            "--out",
            "tangential.csv",
        ])
        .status()
        .unwrap()
        .success());
    let out = bin()
        .args([
            "--out-dir",
            dir.to_str().unwrap(),
            "certify",
            "--problem",
            dir.join("example8_problem.json").to_str().unwrap(),
            "--solution",
            dir.join("tangential.csv").to_str().unwrap(),
            "--reference",
            dir.join("example8_reference.json").to_str().unwrap(),
            "--out",
            "tangential_report.json",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("reject"), "stdout: {stdout}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("tangential_report.json")).unwrap())
            .unwrap();
    assert!(report["residual"].as_f64().unwrap() > 1e-3);
    assert_eq!(report["passes"], serde_json::json!(false));
    // Per-family residuals are listed for diagnosis.
    assert!(report["families"].as_array().unwrap().len() >= 5);
}

#[test]
fn study_emits_consistent_costs() {
    let dir = tmpdir("study");
    assert!(bin()
        .args(["--out-dir", dir.to_str().unwrap(), "example8"])
        .status()
        .unwrap()
        .success());
    let out = bin()
        .args([
            "--out-dir",
            dir.to_str().unwrap(),
            "study",
            "--problem",
            dir.join("example8_problem.json").to_str().unwrap(),
            "--reference",
            dir.join("example8_reference.json").to_str().unwrap(),
            "--nu-list",
            "2,4",
            "--starts",
            "6",
            "--out",
            "study.csv",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.join("study.csv")).unwrap();
    assert!(csv.starts_with("nu,cost,state_gap_w12,ab_gap_w12,u_gap_l2,failed"));
    for row in 0..2 {
        let cost = read_csv_row(&dir.join("study.csv"), "cost", row);
        assert!((cost - 2.205).abs() < 1e-6, "row {row}: {cost}");
    }
}

#[test]
fn coderiv_subcommand_reports_descriptor() {
    let dir = tmpdir("coderiv");
    let input = serde_json::json!({
        "kind": "orthant", "x": [0.0], "v": [0.0], "w": [1.0], "tol": 1e-10
    });
    let ipath = dir.join("in.json");
    fs::write(&ipath, input.to_string()).unwrap();
    let out = bin()
        .args([
            "--out-dir",
            dir.to_str().unwrap(),
            "coderiv",
            "--input",
            ipath.to_str().unwrap(),
            "--out",
            "desc.json",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let desc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("desc.json")).unwrap()).unwrap();
    assert_eq!(desc["descriptor"]["Constrained"]["nonneg_indices"], serde_json::json!([0]));
}

#[test]
fn usage_errors_exit_2() {
    let out = bin().args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out2 = bin().args(["simulate"]).output().unwrap();
    assert_eq!(out2.status.code(), Some(2));
}

#[test]
fn numerical_failures_exit_1_with_json_error() {
    let dir = tmpdir("numfail");
    assert!(bin()
        .args(["--out-dir", dir.to_str().unwrap(), "example8"])
        .status()
        .unwrap()
        .success());
    // Control outside the box: the simulation rejects it.
    let controls = serde_json::json!({"u": [[-1.0, -1.0], [5.0, 0.0]]});
    let cpath = dir.join("bad.json");
    fs::write(&cpath, controls.to_string()).unwrap();
    let out = bin()
        .args([
            "--out-dir",
            dir.to_str().unwrap(),
            "simulate",
            "--problem",
            dir.join("example8_problem.json").to_str().unwrap(),
            "--controls",
            cpath.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert!(err["error"].as_str().unwrap().contains("control"));
}
