//! CLI contract: exit codes (0 success, 1 usage or configuration error,
//! 2 completed run whose verdict failed), report shape on stdout, side
//! files under `--out`, and the switch/oracle argument grammar.

use std::process::{Command, Output};

fn deflab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deflab"))
        .args(args)
        .output()
        .expect("spawn deflab")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

fn stderr_str(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf-8 stderr")
}

/// A fast run whose verdict passes structurally: equal kernels make the
/// max-closure experiment a control with identically zero gap.
const QUICK_PASS: &[&str] = &[
    "max-closure",
    "--a", "1",
    "--T", "1",
    "--nu1", "zero",
    "--nu2", "zero",
    "--paths", "500",
    "--steps", "64",
];

/// A fast run whose verdict fails deterministically: without the bridge
/// correction a 16-step grid underestimates the crossing mass so badly
/// that every terminal-expectation row misses its quadrature oracle.
const QUICK_FAIL: &[&str] = &[
    "verify-counterexample",
    "--a", "1",
    "--T", "1",
    "--paths", "2000",
    "--steps", "16",
    "--bridge", "off",
];

#[test]
fn help_and_version_exit_zero() {
    let help = deflab(&["--help"]);
    assert_eq!(exit_code(&help), 0);
    let text = stdout_str(&help);
    for sub in [
        "verify-counterexample",
        "max-closure",
        "arbitrage",
        "oracle",
        "simulate",
    ] {
        assert!(text.contains(sub), "--help does not mention {sub}");
    }
    assert_eq!(exit_code(&deflab(&["--version"])), 0);
    assert_eq!(exit_code(&deflab(&["verify-counterexample", "--help"])), 0);
}

#[test]
fn missing_required_barrier_is_a_usage_error() {
    let out = deflab(&["verify-counterexample", "--T", "1"]);
    assert_eq!(exit_code(&out), 1);
    let err = stderr_str(&out);
    assert!(
        err.contains("--a") && err.contains("Usage"),
        "stderr: {err}"
    );
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = deflab(&["verify-counterexample", "--a", "1", "--T", "1", "--frobnicate"]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn invalid_configuration_exits_one() {
    let out = deflab(&["verify-counterexample", "--a", "-1", "--T", "1"]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr_str(&out).starts_with("error:"), "stderr: {}", stderr_str(&out));
}

#[test]
fn switches_take_on_off_values() {
    // The quick run's 500 paths are even, as antithetic pairing requires.
    let mut args = QUICK_PASS.to_vec();
    args.extend_from_slice(&["--bridge", "off", "--antithetic", "on"]);
    let out = deflab(&args);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_str(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout_str(&out)).expect("json");
    assert_eq!(report["config"]["bridge"], serde_json::Value::Bool(false));
    assert_eq!(report["config"]["antithetic"], serde_json::Value::Bool(true));

    let mut bad = QUICK_PASS.to_vec();
    bad.extend_from_slice(&["--bridge", "maybe"]);
    assert_eq!(exit_code(&deflab(&bad)), 1);
}

#[test]
fn oracle_prints_value_and_error_estimate() {
    let out = deflab(&["oracle", "--quantity", "expected-z", "--n", "2", "--a", "1", "--T", "1"]);
    assert_eq!(exit_code(&out), 0);
    let text = stdout_str(&out);
    let value: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("value: "))
        .expect("value line")
        .parse()
        .expect("value parses");
    assert!((value - 0.996_926_589_228_965_4).abs() < 1e-9, "value {value}");
    assert!(text.lines().any(|l| l.starts_with("error_estimate: ")));
}

#[test]
fn failing_verdict_exits_two_with_the_report_on_stdout() {
    let out = deflab(QUICK_FAIL);
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr_str(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout_str(&out)).expect("json");
    assert_eq!(report["verdict"]["passed"], serde_json::Value::Bool(false));
    assert!(
        !report["verdict"]["failures"].as_array().unwrap().is_empty(),
        "failures listed"
    );
    // The human summary goes to stderr when stdout carries the JSON.
    assert!(stderr_str(&out).contains("verdict: FAIL"));
}

#[test]
fn report_has_the_documented_shape() {
    let out = deflab(QUICK_PASS);
    assert_eq!(exit_code(&out), 0);
    let report: serde_json::Value = serde_json::from_str(&stdout_str(&out)).expect("json");
    for key in ["schema", "config", "quantities", "diagnostics", "verdict", "runtime_seconds"] {
        assert!(report.get(key).is_some(), "missing key {key}");
    }
    assert!(report["runtime_seconds"].as_f64().expect("wall clock") > 0.0);
    assert_eq!(report["config"]["paths"].as_u64(), Some(500));
    assert_eq!(report["config"]["steps"].as_u64(), Some(64));
    let quantities = report["quantities"].as_array().expect("rows");
    assert!(!quantities.is_empty());
    for q in quantities {
        assert!(q.get("name").is_some() && q.get("verdict").is_some());
    }
}

#[test]
fn out_flag_writes_json_and_csv_side_file() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("report.json");
    let mut args = QUICK_PASS.to_vec();
    let path_str = path.to_str().expect("utf-8 path");
    args.extend_from_slice(&["--out", path_str]);
    let out = deflab(&args);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_str(&out));
    // With --out the summary moves to stdout and the JSON to the file.
    assert!(stdout_str(&out).contains("verdict: PASS"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).expect("json file")).expect("json");
    assert_eq!(json["verdict"]["passed"], serde_json::Value::Bool(true));
    let csv = std::fs::read_to_string(path.with_extension("csv")).expect("csv side file");
    let header = csv.lines().next().expect("csv header");
    assert!(
        header.contains("quantity") && header.contains("verdict"),
        "header: {header}"
    );
}

#[test]
fn report_is_written_even_when_the_verdict_fails() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("failing.json");
    let mut args = QUICK_FAIL.to_vec();
    let path_str = path.to_str().expect("utf-8 path");
    args.extend_from_slice(&["--out", path_str]);
    let out = deflab(&args);
    assert_eq!(exit_code(&out), 2);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).expect("json file")).expect("json");
    assert_eq!(json["verdict"]["passed"], serde_json::Value::Bool(false));
}
