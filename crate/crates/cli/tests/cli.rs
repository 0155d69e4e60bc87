use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn procrl(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_procrl"));
    cmd.args(args).env_remove("PROCRL_SEED");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn procrl")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn calibrate_reports_steady_state() {
    let v = stdout_json(&procrl(&["calibrate"], &[]));
    assert_eq!(v["pressure"], 0.784);
    assert_eq!(v["passed"], true);
}

#[test]
fn calibrate_fails_on_unsolvable_plant() {
    let dir = tempfile::tempdir().unwrap();
    let plant = dir.path().join("plant.toml");
    std::fs::write(&plant, "cv_pcv = 0.01\n").unwrap();
    let out = procrl(&["calibrate", "--plant", plant.to_str().unwrap()], &[]);
    assert!(!out.status.success());
}

#[test]
fn plan_text_and_json() {
    let out = procrl(&["plan", "--deviation", "FI101:+"], &[]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("root cause: feed_pressure +"), "{text}");
    assert!(text.contains("action: PC130.SV -"), "{text}");
    assert!(text.contains("PC130 (PID) controls to close PCV101"), "{text}");

    let v = stdout_json(&procrl(
        &["plan", "--deviation", "vaporizer_pressure:+", "--deviation", "FI101:+", "--json"],
        &[],
    ));
    assert_eq!(v["goal"]["restore"], "-");
    assert_eq!(v["plan"]["steps"][0]["target"], "PC130.SV");
}

#[test]
fn plan_rejects_bad_input() {
    assert_eq!(procrl(&["plan", "--deviation", "FI101"], &[]).status.code(), Some(2));
    assert_eq!(procrl(&["plan", "--deviation", "nope:+"], &[]).status.code(), Some(2));
    assert_eq!(procrl(&["plan", "--deviation", "FI101:+", "--rules", "/nonexistent.rules"], &[]).status.code(), Some(2));
}

#[test]
fn baseline_from_flags_and_file_agree() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("ramp.toml");
    std::fs::write(&file, "kind = \"ramp\"\nmagnitude = 1.1\nt_complete = 600.0\nt_procedure_start = 0.0\n").unwrap();
    let a = stdout_json(&procrl(&["baseline", "--scenario", file.to_str().unwrap()], &[]));
    let b = stdout_json(&procrl(&["baseline", "--kind", "ramp", "--magnitude", "1.1", "--t-complete", "600"], &[]));
    assert_eq!(a, b);
    assert_eq!(a["rewards"].as_array().unwrap().len(), 30);
    let both = procrl(&["baseline", "--scenario", file.to_str().unwrap(), "--magnitude", "1.1"], &[]);
    assert!(!both.status.success());
}

#[test]
fn train_then_evaluate_fixed() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = procrl(
        &["train", "--scenario", "fixed", "--updates", "2", "--quiet", "--out", out_dir.to_str().unwrap()],
        &[("PROCRL_SEED", "99")],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["learning_curve.csv", "baseline_trace.csv", "trained_trace.csv", "checkpoint.json", "report.json"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let report = read_json(&out_dir.join("report.json"));
    assert_eq!(report["seeds"]["master"], 99);
    assert_eq!(report["episodes"], 16);

    let ck = out_dir.join("checkpoint.json");
    let trace = dir.path().join("eval.csv");
    let args = ["evaluate", "--checkpoint", ck.to_str().unwrap(), "--trace", trace.to_str().unwrap()];
    let a = stdout_json(&procrl(&args, &[]));
    let b = stdout_json(&procrl(&args, &[]));
    assert_eq!(a, b);
    assert_eq!(a["cumulative_reward"], report["trained"]["cumulative_reward"]);
    assert!(trace.exists());

    let mut broken = read_json(&ck);
    broken["actor"]["params"].as_array_mut().unwrap().pop();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, broken.to_string()).unwrap();
    let out = procrl(&["evaluate", "--checkpoint", bad.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
}

#[test]
fn train_variable_writes_episode_log() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("var");
    let out = procrl(
        &["train", "--scenario", "variable", "--episodes", "40", "--seed", "3", "--quiet", "--out", out_dir.to_str().unwrap()],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&out_dir.join("report.json"));
    assert_eq!(report["seeds"]["master"], 3);
    let rows = std::fs::read_to_string(out_dir.join("episodes.csv")).unwrap();
    assert_eq!(rows.lines().count(), 41);
    assert!(out_dir.join("checkpoint.json").exists());

    let mixed = procrl(&["train", "--scenario", "variable", "--updates", "3"], &[]);
    assert!(!mixed.status.success());
}

#[test]
fn replay_prints_final_frame() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.json");
    let mut sim = procrl_harness::LiveSim::new(Default::default()).unwrap();
    sim.inject(procrl_core::scenario::MalfunctionScenario::step(1.2, 0.0)).unwrap();
    for _ in 0..3 {
        sim.advance_minute().unwrap();
    }
    std::fs::write(&log, serde_json::to_string(&sim.event_log()).unwrap()).unwrap();
    let v = stdout_json(&procrl(&["replay", "--log", log.to_str().unwrap()], &[]));
    assert_eq!(v, serde_json::to_value(sim.frame()).unwrap());
}

#[test]
fn serve_accepts_sessions() {
    use std::io::{BufRead, BufReader, Read, Write};

    let mut child = Command::new(env!("CARGO_BIN_EXE_procrl"))
        .args(["serve", "--port", "0"])
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("listen banner").to_string();

    let body = r#"{"clock":{"mode":"paused"}}"#;
    let mut stream = std::net::TcpStream::connect(&addr).unwrap();
    write!(
        stream,
        "POST /sessions HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 201"), "{response}");
    assert!(response.contains("\"vaporizer_pressure\":0.784"), "{response}");
}
