use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn caltool(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_caltool"))
        .args(args)
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn analyze_exit_codes() {
    let ok = caltool(&["analyze", path(&fixture("pipeline.json"))]);
    assert_eq!(ok.status.code(), Some(0));
    let text = String::from_utf8(ok.stdout).unwrap();
    assert!(text.contains("Actuate"), "{text}");

    let cyc = caltool(&["analyze", path(&fixture("cycle.json"))]);
    assert_eq!(cyc.status.code(), Some(1));

    let missing = caltool(&["analyze", "/nonexistent/model.json"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
}

#[test]
fn invalid_topology_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(
        &bad,
        r#"{"nodes": [], "channels": [{"from": "A", "to": "B"}]}"#,
    )
    .unwrap();
    let out = caltool(&["analyze", path(&bad)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn analyze_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = caltool(&[
        "analyze",
        path(&fixture("pipeline.json")),
        "--format",
        "json",
        "--out",
        path(&report),
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["offsets"], serde_json::json!(["0ms", "3ms", "6ms"]));
}

#[test]
fn simulated_trace_checks_clean() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let sim = caltool(&[
        "simulate",
        path(&fixture("pipeline.json")),
        path(&fixture("scenarios/pipeline_nominal.json")),
        "--out",
        path(&trace),
    ]);
    assert_eq!(
        sim.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&sim.stdout)
    );
    let check = caltool(&["check-trace", path(&fixture("pipeline.json")), path(&trace)]);
    assert_eq!(check.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&check.stdout).contains("verdict: PASS"));
}

#[test]
fn tampered_trace_fails_check() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let sim = caltool(&[
        "simulate",
        path(&fixture("pipeline.json")),
        path(&fixture("scenarios/pipeline_nominal.json")),
        "--out",
        path(&trace),
    ]);
    assert!(sim.status.success());
    let text = fs::read_to_string(&trace).unwrap();
    let kept: Vec<&str> = text
        .lines()
        .filter(|l| !l.contains(r#""kind":"send""#))
        .collect();
    assert!(kept.len() < text.lines().count());
    fs::write(&trace, kept.join("\n")).unwrap();
    let check = caltool(&["check-trace", path(&fixture("pipeline.json")), path(&trace)]);
    assert_eq!(check.status.code(), Some(1));
}

#[test]
fn stdout_trace_without_out() {
    let sim = caltool(&[
        "simulate",
        path(&fixture("adas.json")),
        path(&fixture("scenarios/adas_nominal.json")),
        "--seed",
        "4",
    ]);
    let trace = String::from_utf8(sim.stdout).unwrap();
    assert!(trace.lines().count() > 10);
    for line in trace.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
    assert!(!sim.stderr.is_empty());
}

#[test]
fn spike_run_reports_faults() {
    let sim = caltool(&[
        "simulate",
        path(&fixture("adas.json")),
        path(&fixture("scenarios/adas_spike.json")),
        "--format",
        "json",
    ]);
    assert_eq!(sim.status.code(), Some(1));
}

#[test]
fn conformance_table() {
    let out = caltool(&[
        "simulate",
        path(&fixture("pipeline.json")),
        path(&fixture("scenarios/pipeline_nominal.json")),
        "--runs",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("scenario,seed,coordinator,conformant"));
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn budget_unknown_node() {
    let out = caltool(&["budget", path(&fixture("adas.json")), "--node", "Nope"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_coordinator_is_usage_error() {
    let out = caltool(&[
        "simulate",
        path(&fixture("adas.json")),
        path(&fixture("scenarios/adas_nominal.json")),
        "--coordinator",
        "anarchic",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
