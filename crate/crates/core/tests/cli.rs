use std::io::Write;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

use bell_lab::sim::{fit_fringe, read_fringe_csv, simulate_run, RunRecord, SimConfig};

fn bell_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bell-lab"))
        .args(args)
        .env_remove("BELL_LAB_SEED")
        .output()
        .expect("binary runs")
}

fn with_stdin(args: &[&str], input: &[u8]) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_bell-lab"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary runs");
    child.stdin.take().unwrap().write_all(input).unwrap();
    child.wait_with_output().unwrap()
}

fn json(args: &[&str]) -> Value {
    let mut full = args.to_vec();
    full.extend(["--format", "json"]);
    let out = bell_lab(&full);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON document")
}

#[test]
fn every_json_output_is_a_single_document() {
    let cases: [&[&str]; 6] = [
        &["predict", "--f", "0.4", "--angles", "72.24,45,17.76,0"],
        &["optimize", "--f", "1"],
        &["lhv"],
        &["estimate-f", "--n-vv", "16", "--n-hh", "100"],
        &["simulate", "--f", "0.4", "--duration", "100"],
        &["critical-eta", "--f", "1", "--tol", "1e-3"],
    ];
    for args in cases {
        let doc = json(args);
        assert_eq!(doc["command"], args[0]);
        assert!(doc["config"]["global"].is_object());
        assert!(doc.get("result").is_some());
    }
}

#[test]
fn predict_at_published_quad() {
    let doc = json(&["predict", "--f", "0.4", "--angles", "72.24,45,17.76,0"]);
    let r = doc["result"]["report"]["r"].as_f64().unwrap();
    assert!((r - 1.152128).abs() < 1e-6, "{r}");
}

#[test]
fn optimize_reaches_maximal_violation() {
    let doc = json(&["optimize", "--f", "1"]);
    let r = doc["result"]["r_at_max"].as_f64().unwrap();
    assert!((r - (2f64.sqrt() + 1.0) / 2.0).abs() < 1e-6);
}

#[test]
fn critical_eta_lists_published_limits() {
    let doc = json(&["critical-eta", "--f", "1,0.2", "--tol", "1e-3"]);
    assert_eq!(doc["result"]["published_limit_maximal_entanglement"], 0.81);
    assert_eq!(doc["result"]["thresholds"].as_array().unwrap().len(), 2);
}

#[test]
fn simulate_then_analyze_is_bit_identical() {
    let out = bell_lab(&[
        "simulate",
        "--f",
        "0.4",
        "--target-visibility",
        "0.973",
        "--duration",
        "3000",
        "--seed",
        "9",
        "--format",
        "json",
    ]);
    assert!(out.status.success());
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();

    // the echoed configuration reproduces the record in-process
    let cfg: SimConfig = serde_json::from_value(doc["config"]["resolved"].clone()).unwrap();
    let record: RunRecord = serde_json::from_value(doc["result"].clone()).unwrap();
    assert_eq!(simulate_run(&cfg).unwrap(), record);

    let analyzed = with_stdin(&["analyze", "--format", "json"], &out.stdout);
    assert!(analyzed.status.success());
    let again: Value = serde_json::from_slice(&analyzed.stdout).unwrap();
    assert_eq!(again["result"]["report"], doc["result"]["report"]);
    assert_eq!(again["result"]["matches_record"], true);
}

#[test]
fn fringe_then_fit_matches_in_process_fit() {
    let out = bell_lab(&[
        "fringe",
        "--f",
        "0.4",
        "--noise-mix",
        "0.05",
        "--per-point-duration",
        "800",
        "--seed",
        "4",
        "--format",
        "csv",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    assert!(text.lines().next().unwrap().starts_with('#'));
    assert!(text.contains("\nangle_deg,count\n"));

    let expected = fit_fringe(&read_fringe_csv(out.stdout.as_slice()).unwrap()).unwrap();
    let fitted = with_stdin(&["fit", "--format", "json"], &out.stdout);
    assert!(
        fitted.status.success(),
        "{}",
        String::from_utf8_lossy(&fitted.stderr)
    );
    let doc: Value = serde_json::from_slice(&fitted.stdout).unwrap();
    assert_eq!(
        doc["result"]["fit"],
        serde_json::to_value(expected).unwrap()
    );
}

#[test]
fn seed_flag_and_env_agree() {
    let flag = bell_lab(&[
        "simulate",
        "--f",
        "0.4",
        "--duration",
        "500",
        "--seed",
        "77",
        "--format",
        "json",
    ])
    .stdout;
    let env = Command::new(env!("CARGO_BIN_EXE_bell-lab"))
        .args([
            "simulate",
            "--f",
            "0.4",
            "--duration",
            "500",
            "--format",
            "json",
        ])
        .env("BELL_LAB_SEED", "77")
        .output()
        .unwrap()
        .stdout;
    assert_eq!(flag, env);
    let other = bell_lab(&[
        "simulate",
        "--f",
        "0.4",
        "--duration",
        "500",
        "--seed",
        "78",
        "--format",
        "json",
    ])
    .stdout;
    assert_ne!(flag, other);
}

#[test]
fn table_output_echoes_configuration() {
    let out = bell_lab(&[
        "predict",
        "--f",
        "0.4",
        "--angles",
        "10,20,30,40",
        "--precision",
        "3",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("# args.state.f = 0.4"));
    assert!(text.contains("# global.seed = 0"));
}

#[test]
fn exit_codes() {
    assert_eq!(bell_lab(&["--help"]).status.code(), Some(0));
    assert_eq!(
        bell_lab(&["predict", "--f", "0.4", "--angles", "1,2,3,4", "--bogus"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        bell_lab(&["predict", "--f", "0.4", "--angles", "1,2,3"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        bell_lab(&["fit", "--input", "/nonexistent/fringe.csv"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        bell_lab(&["predict", "--f", "0.4", "--angles", "1,2,3,4", "--eta-1", "1.5"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        bell_lab(&["critical-eta", "--f", "0"]).status.code(),
        Some(2)
    );
    assert_eq!(
        bell_lab(&["optimize", "--f", "0.4", "--budget", "100"])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn negative_angles_are_accepted() {
    let a = json(&["predict", "--f", "0.4", "--angles", "-10,45,-170,0"]);
    let b = json(&["predict", "--f", "0.4", "--angles", "170,45,10,0"]);
    assert_eq!(a["result"]["report"], b["result"]["report"]);
}
