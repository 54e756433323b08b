use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hdw(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdw"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run hdw")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Asserts the exit code and that stderr is a single JSON error line.
fn expect_error(out: &Output, code: i32) -> Value {
    assert_eq!(out.status.code(), Some(code), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.trim_end().lines().count(), 1, "stderr: {stderr}");
    let v: Value = serde_json::from_str(stderr.trim()).expect("stderr is JSON");
    assert_eq!(v["code"], code);
    v
}

#[test]
fn malformed_bounds_name_the_item() {
    let dir = tempfile::tempdir().unwrap();
    let out = hdw(dir.path(), &["simulate", "--mu", "0.5", "--bounds", "0.5,0.4,abc", "--steps", "10"]);
    let err = expect_error(&out, 2);
    assert!(err["message"].as_str().unwrap().contains("item 3 ('abc')"), "{err}");
}

#[test]
fn sweep_requires_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = hdw(dir.path(), &["sweep", "--n", "4", "--mu", "0.5", "--grid", "4", "--replicas", "10"]);
    let err = expect_error(&out, 2);
    assert!(err["message"].as_str().unwrap().contains("--seed"));
}

#[test]
fn unreadable_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = hdw(dir.path(), &["--config", "missing.toml", "bound", "--n", "3", "--mu", "0.5", "--r1", "0.5", "--rn", "0.5"]);
    expect_error(&out, 2);
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("file"), "x").unwrap();
    let out = hdw(
        dir.path(),
        &["simulate", "--mu", "0.5", "--bounds", "0.3,0.3,0.3", "--steps", "5", "--out", "file/sub"],
    );
    expect_error(&out, 3);
}

#[test]
fn precondition_failures_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let complete = hdw(dir.path(), &["synthesize", "--mu", "0.5", "--bounds", "0.2,0.2,0.2", "--x", "0.1,0.5,0.9"]);
    expect_error(&complete, 4);

    let budget = hdw(
        dir.path(),
        &[
            "oracle", "--mu", "0.5", "--bounds", "0.4,0.3,0.2", "--x", "0.1,0.3,0.5", "--horizon", "10",
            "--functional", "all-complete", "--budget", "1000",
        ],
    );
    expect_error(&budget, 4);
}

#[test]
fn weighting_factor_below_half_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let out = hdw(dir.path(), &["bound", "--n", "3", "--mu", "0.4", "--r1", "0.5", "--rn", "0.5"]);
    let err = expect_error(&out, 5);
    assert_eq!(err["error"], "theorem-domain");
}

#[test]
fn synthesize_then_replay_and_detect_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["synthesize", "--mu", "0.5", "--bounds", "0.4,0.3,0.2", "--x", "0.06,0.14,0.5", "--out", "c.json"];
    let out = hdw(dir.path(), &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let replay = hdw(dir.path(), &["replay", "--sequence", "c.json"]);
    assert!(replay.status.success());
    assert!(stdout(&replay).contains("verified"));

    let path = dir.path().join("c.json");
    let mut file: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    file["pairs"] = Value::Array(vec![]);
    std::fs::write(&path, file.to_string()).unwrap();
    expect_error(&hdw(dir.path(), &["replay", "--sequence", "c.json"]), 6);
    expect_error(&hdw(dir.path(), &["verify", "--sequence", "c.json"]), 6);
}

#[test]
fn complete_mode_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = hdw(
        dir.path(),
        &["synthesize", "--mode", "complete", "--mu", "0.75", "--bounds", "0.5,0.41,0.35,0.24", "--x", "0.1,0.3,0.45,0.7"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let verify = hdw(dir.path(), &["verify", "--sequence", "control.json"]);
    assert!(verify.status.success());
    assert!(stdout(&verify).contains("PASS sequence (Complete)"));
}

#[test]
fn simulated_trace_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let out = hdw(
        dir.path(),
        &["simulate", "--mu", "0.5", "--bounds", "0.5,0.41,0.35,0.24,0.175", "--seed", "11", "--steps", "400"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let verify = hdw(dir.path(), &["verify", "--trace", "trace.csv"]);
    assert!(verify.status.success(), "{}", stdout(&verify));
    for check in ["replay", "gap", "convexity"] {
        assert!(stdout(&verify).contains(&format!("PASS {check}")));
    }

    // Corrupt one recorded opinion: replay must fail.
    let csv = dir.path().join("trace.csv");
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut fields: Vec<String> = lines[5].split(',').map(str::to_string).collect();
    fields[1] = "0.123456789".into();
    lines[5] = fields.join(",");
    std::fs::write(&csv, lines.join("\n") + "\n").unwrap();
    let out = hdw(dir.path(), &["verify", "--trace", "trace.csv"]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn zero_steps_records_only_the_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let out = hdw(
        dir.path(),
        &["simulate", "--mu", "0.5", "--bounds", "0.3,0.2,0.1", "--x0", "0.1,0.5,0.9", "--steps", "0"],
    );
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0], "t,x_1,x_2,x_3");
    let values: Vec<f64> = rows[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(values, [0.0, 0.1, 0.5, 0.9]);
}

#[test]
fn flags_override_config_sections() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "mu = 0.4\nn = 3\nr1 = 0.5\nrn = 0.5\n[bound]\nmu = 0.5\n",
    )
    .unwrap();
    let from_section = hdw(dir.path(), &["--config", "run.toml", "bound"]);
    assert!(from_section.status.success(), "{}", String::from_utf8_lossy(&from_section.stderr));
    assert!(stdout(&from_section).contains("T = 16"));

    let flag = hdw(dir.path(), &["--config", "run.toml", "bound", "--mu", "0.3"]);
    expect_error(&flag, 5);
}

#[test]
fn seeded_simulations_repeat_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["simulate", "--n", "6", "--mu", "0.5", "--bounds", "0.3,0.3,0.2,0.2,0.1,0.1", "--seed", "5", "--steps", "300"];
    assert!(hdw(dir.path(), &args).status.success());
    let first = std::fs::read(dir.path().join("trace.csv")).unwrap();
    assert!(hdw(dir.path(), &args).status.success());
    assert_eq!(first, std::fs::read(dir.path().join("trace.csv")).unwrap());
}

#[test]
fn sweep_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = hdw(
        dir.path(),
        &["--jobs", "1", "sweep", "--n", "4", "--mu", "0.5", "--grid", "4", "--replicas", "20", "--seed", "1", "--out", "s"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("s/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("s/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 1);
}
