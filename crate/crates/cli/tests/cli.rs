use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const P1: &str = r#"{
  "phi": { "c": 2.0, "l": [-2.0], "Q": [[1.0]] },
  "Phi": [ { "c": -1.0, "l": [1.0], "Q": [[0.0]] } ],
  "g": { "m": 1, "pieces": [
    { "C": { "A": [[1.0]], "b": [0.0], "E": [], "d": [] }, "A": [[0.0]], "a": [0.0], "alpha": 0.0 }
  ] },
  "meta": { "xbar": [1.0], "lambdabar": [1.0], "local_min": true }
}"#;

fn plqsqp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plqsqp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, kind: &str, extra: &[&str]) -> std::path::PathBuf {
    let path = dir.join(format!("{kind}.json"));
    let mut args = vec!["generate", "--kind", kind, "--out", s(&path)];
    args.extend_from_slice(extra);
    let out = plqsqp(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    path
}

#[test]
fn solve_p1_takes_one_step() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("p1.json");
    fs::write(&problem, P1).unwrap();
    let out_dir = dir.path().join("run");
    let out = plqsqp(&["solve", "--problem", s(&problem), "--x0", "0", "--lambda0", "0", "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(0));
    let trace = fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    let rows: Vec<&str> = trace.lines().skip(1).collect();
    assert!((1..=2).contains(&(rows.len() - 1)), "{trace}");
    let report: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "converged");
    assert!((report["x"][0].as_f64().unwrap() - 1.0).abs() < 1e-10);
    assert!(report["final_residual"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn diagnose_critical_showcase_reports_critical_multiplier() {
    let dir = tempfile::tempdir().unwrap();
    let problem = generate(dir.path(), "critical_showcase", &[]);
    let out_dir = dir.path().join("diag");
    let out = plqsqp(&["diagnose", "--problem", s(&problem), "--reference", "0;-1", "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("noncritical: fails")), "{stdout}");
    let csv = fs::read_to_string(out_dir.join("verdicts.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn sweep_writes_one_trace_per_start_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let problem = generate(dir.path(), "elqp", &["--n", "2", "--m", "2", "--seed", "3"]);
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = plqsqp(&["sweep", "--problem", s(&problem), "--starts", "10", "--seed", "7", "--out", s(&out_dir)]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    let (a, b) = (run("a"), run("b"));
    let traces = fs::read_dir(&a)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("trace_"))
        .count();
    assert_eq!(traces, 10);
    let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 11);
    assert_eq!(summary, fs::read_to_string(b.join("summary.csv")).unwrap());
    for k in 0..10 {
        let name = format!("trace_{k:03}.csv");
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }
}

#[test]
fn validation_failure_exits_3_with_error_record() {
    let dir = tempfile::tempdir().unwrap();
    let bad = P1.replace(r#""Q": [[1.0]] },"#, r#""Q": [[1.0, 2.0], [0.0, 1.0]] },"#);
    let problem = dir.path().join("bad.json");
    fs::write(&problem, bad).unwrap();
    let out_dir = dir.path().join("run");
    let out = plqsqp(&["solve", "--problem", s(&problem), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(3));
    let rec: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("error.json")).unwrap()).unwrap();
    assert_eq!(rec["exit_code"], 3);

    let asym = P1.replace(r#""A": [[0.0]]"#, r#""A": [[0.0, 1.0], [0.0, 0.0]]"#);
    fs::write(&problem, asym).unwrap();
    let out = plqsqp(&["solve", "--problem", s(&problem)]);
    assert_eq!(out.status.code(), Some(3));

    let out = plqsqp(&["solve", "--problem", s(&dir.path().join("missing.json"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn solver_failure_exits_2_and_keeps_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let problem = generate(dir.path(), "nlp", &["--n", "3", "--m", "2", "--seed", "4"]);
    let out_dir = dir.path().join("run");
    let out = plqsqp(&["solve", "--problem", s(&problem), "--x0", "0.5,0.5,0.5", "--max-iter", "1", "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    let rec: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("error.json")).unwrap()).unwrap();
    assert_eq!(rec["error"], "max_iter_reached");
    assert_eq!(fs::read_to_string(out_dir.join("trace.csv")).unwrap().lines().count(), 3);
}

#[test]
fn generated_instance_solves_from_metadata_reference() {
    let dir = tempfile::tempdir().unwrap();
    let problem = generate(dir.path(), "minmax", &["--n", "3", "--m", "3", "--seed", "2"]);
    let out_dir = dir.path().join("run");
    let text = fs::read_to_string(&problem).unwrap();
    let meta: Value = serde_json::from_str(&text).unwrap();
    let x0: Vec<String> = meta["meta"]["xbar"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| format!("{}", v.as_f64().unwrap() + 0.05))
        .collect();
    let out = plqsqp(&["solve", "--problem", s(&problem), "--x0", &x0.join(","), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert!(report["rate"]["reference_x"].is_array());
}

#[test]
fn check_calculus_passes_on_p1() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("p1.json");
    fs::write(&problem, P1).unwrap();
    let out_dir = dir.path().join("calc");
    let out = plqsqp(&["check-calculus", "--problem", s(&problem), "--samples", "40", "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let rows: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("calculus.json")).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 4);
}
