use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn telegov(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_telegov"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: [&str; 4] = ["--set", "flows_per_run=40", "--set", "runs=1"];

fn run_small(dir: &Path, extra: &[&str]) -> Output {
    let out = dir.join("report.json");
    let mut args = vec!["run", "--out", out.to_str().unwrap()];
    args.extend(SMALL);
    args.extend(extra);
    telegov(&args)
}

#[test]
fn help_for_every_subcommand() {
    for sub in [
        "run",
        "sweep",
        "attack",
        "validate-theorems",
        "audit-verify",
        "breaker-reset",
        "emit-config",
    ] {
        let o = telegov(&[sub, "--help"]);
        assert!(o.status.success(), "{sub}");
        assert!(stdout(&o).contains("Usage:"), "{sub}");
    }
}

#[test]
fn run_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_small(dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["flows_per_run"], 40);
    assert_eq!(report["per_run"].as_array().unwrap().len(), 1);
}

#[test]
fn unknown_override_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_small(dir.path(), &["--set", "no_such_key=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).starts_with("telegov: error kind=config"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn usage_errors_exit_two() {
    let o = telegov(&["attack", "--kind", "teleport"]);
    assert_eq!(o.status.code(), Some(2));
    let o = telegov(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn broken_determinism_fixture_fails_validation() {
    let o = telegov(&[
        "validate-theorems",
        "--trials",
        "50",
        "--set",
        "order_dependent_fixture=true",
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stdout(&o).contains("policy_determinism"));
}

#[test]
fn audit_verify_reports_first_tampered_record() {
    let dir = tempfile::tempdir().unwrap();
    let audits = dir.path().join("audit");
    let o = run_small(dir.path(), &["--audit-dir", audits.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let log = audits.join("run-0.audit");

    let ok = telegov(&["audit-verify", "--log", log.to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0));
    let line = stdout(&ok);
    assert!(line.starts_with("status=ok records="), "{line}");
    let records: u64 = line
        .split_whitespace()
        .find_map(|w| w.strip_prefix("records="))
        .unwrap()
        .parse()
        .unwrap();

    let mut bytes = std::fs::read(&log).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    std::fs::write(&log, &bytes).unwrap();
    let bad = telegov(&["audit-verify", "--log", log.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
    let expected = format!("status=tampered first_tampered_index={}", records - 1);
    assert!(stdout(&bad).starts_with(&expected), "{}", stdout(&bad));
}

#[test]
fn breaker_reset_releases_a_quarantined_agent() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("state.json");
    let o = run_small(dir.path(), &["--state-out", state.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let mut v: Value = serde_json::from_slice(&std::fs::read(&state).unwrap()).unwrap();
    let agent = v["agents"][0]["agent"].as_str().unwrap().to_string();
    v["agents"][0]["current_level"] = 4.into();
    v["agents"][0]["circuit_broken"] = true.into();
    v["agents"][0]["capabilities"] = Value::Array(vec![]);
    std::fs::write(&state, serde_json::to_vec_pretty(&v).unwrap()).unwrap();

    let log = dir.path().join("ops.audit");
    let args = |token: &'static str| {
        vec![
            "breaker-reset".to_string(),
            "--state".into(),
            state.to_str().unwrap().into(),
            "--log".into(),
            log.to_str().unwrap().into(),
            "--agent".into(),
            agent.clone(),
            "--token".into(),
            token.into(),
            "--now".into(),
            "100".into(),
        ]
    };
    let run = |a: Vec<String>| {
        Command::new(env!("CARGO_BIN_EXE_telegov"))
            .args(a)
            .output()
            .unwrap()
    };

    let empty = run(args(""));
    assert_eq!(empty.status.code(), Some(2));
    assert!(!log.exists());

    let done = run(args("op-1"));
    assert_eq!(done.status.code(), Some(0), "{}", stderr(&done));
    let report: Value = serde_json::from_slice(&done.stdout).unwrap();
    assert_eq!(report["reset"], true);
    assert_eq!(report["audit_index"], 0);
    assert!(report["level_after"].as_u64().unwrap() < 4);

    let after: Value = serde_json::from_slice(&std::fs::read(&state).unwrap()).unwrap();
    assert!(after["agents"][0]["current_level"].as_u64().unwrap() < 4);
    assert!(!after["agents"][0]["capabilities"]
        .as_array()
        .unwrap()
        .is_empty());

    let verify = telegov(&["audit-verify", "--log", log.to_str().unwrap()]);
    assert!(
        stdout(&verify).starts_with("status=ok records=1 "),
        "{}",
        stdout(&verify)
    );

    let again = run(args("op-1"));
    assert_eq!(again.status.code(), Some(0));
    assert!(stderr(&again).contains("not_quarantined"));
    let verify = telegov(&["audit-verify", "--log", log.to_str().unwrap()]);
    assert!(stdout(&verify).starts_with("status=ok records=1 "));
}

#[test]
fn emitted_configs_load_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scenario.toml");
    let o = telegov(&["emit-config", "--out", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let o = run_small(dir.path(), &["--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}
