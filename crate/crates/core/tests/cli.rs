use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_quorumlab"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

#[test]
fn run_writes_trace_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let file = scenario("paxos.toml");
    let out = run(&["run", file.to_str().unwrap(), "--trace-dir", d]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["seed"], 7);
    assert_eq!(report["passed"], true);
    assert!(report["decisions"].as_array().unwrap().iter().all(|d| d.as_str().unwrap().contains("value=A")));
    let trace = std::fs::read_to_string(dir.path().join("paxos-7.trace")).unwrap();
    assert!(trace.lines().all(|l| l.starts_with("{\"time\":")));

    let again = run(&["run", file.to_str().unwrap(), "--trace-dir", d]);
    assert_eq!(again.status.code(), Some(2));
    let forced = run(&["run", file.to_str().unwrap(), "--trace-dir", d, "--force"]);
    assert!(forced.status.success());
    assert_eq!(std::fs::read_to_string(dir.path().join("paxos-7.trace")).unwrap(), trace);
}

#[test]
fn seed_override_names_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "run",
        scenario("2pc-abort.toml").to_str().unwrap(),
        "--seed",
        "99",
        "--trace-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(dir.path().join("2pc-abort-99.trace").exists());
}

#[test]
fn failed_expectation_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("paxos.toml"))
        .unwrap()
        .replace("step_budget = 10000", "step_budget = 5");
    let file = dir.path().join("short.toml");
    std::fs::write(&file, text).unwrap();
    let out = run(&["run", file.to_str().unwrap(), "--trace-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["halted_by"], "budget");
    assert_eq!(report["passed"], false);
}

#[test]
fn bad_scenario_cites_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("paxos.toml"))
        .unwrap()
        .replace("[params]\n", "[params]\nquoram = 2\n");
    let file = dir.path().join("bad.toml");
    std::fs::write(&file, text).unwrap();
    let out = run(&["run", file.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("quoram") && err.contains("line"), "{err}");
}

#[test]
fn sweep_reports_pass_rate() {
    let out = run(&["sweep", scenario("paxos-dueling.toml").to_str().unwrap(), "--seeds", "0..20"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["runs"], 20);
    assert_eq!(report["pass_rate"], 1.0);
    let empty = run(&["sweep", scenario("paxos.toml").to_str().unwrap(), "--seeds", "4..4"]);
    assert_eq!(empty.status.code(), Some(2));
}

#[test]
fn explain_lists_params_and_invariants() {
    let out = run(&["explain", "3pc"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("crash_point") && text.contains("atomicity"), "{text}");
    assert_eq!(run(&["explain", "zab"]).status.code(), Some(2));
}
