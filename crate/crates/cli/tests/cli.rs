use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fairdyn"))
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Greedy preset shrunk to a few short episodes.
fn small_greedy_config(dir: &Path) -> PathBuf {
    let path = dir.join("greedy.toml");
    ok(bin()
        .args(["init-config", "--preset", "greedy", "--output-dir"])
        .arg(dir.join("run"))
        .arg(&path)
        .output()
        .unwrap());
    let mut config: toml::Table = std::fs::read_to_string(&path).unwrap().parse().unwrap();
    config["evaluation_runs"] = 3.into();
    let episodes = config["episodes"].as_table_mut().unwrap();
    episodes["horizon"] = 6.into();
    episodes["episode_count"] = 3.into();
    episodes["constraint_level"] = 5.0.into();
    config["agent"].as_table_mut().unwrap()["descent_steps"] = 40.into();
    let sweep = config["sweep"].as_table_mut().unwrap();
    sweep["per_axis"] = 3.into();
    sweep["rollouts"] = 2.into();
    std::fs::write(&path, toml::to_string(&config).unwrap()).unwrap();
    path
}

#[test]
fn greedy_run_writes_a_bundle_that_report_reads() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_greedy_config(dir.path());
    let stdout = ok(bin().arg("run-greedy").arg("--config").arg(&config).output().unwrap());
    assert!(stdout.contains("evaluation: 3 runs"), "{stdout}");

    let run = dir.path().join("run");
    for name in ["training_curve.csv", "evaluation.csv", "phase_portrait.csv", "manifest.json"] {
        assert!(run.join(name).is_file(), "missing {name}");
    }
    let curve = std::fs::read_to_string(run.join("training_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 4);

    let report = ok(bin().arg("report").arg(&run).output().unwrap());
    assert!(report.starts_with("agent greedy"), "{report}");
    assert!(report.contains("manifest.json") || report.contains("evaluation.csv"), "{report}");
}

#[test]
fn agent_kind_must_match_the_command() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_greedy_config(dir.path());
    let out = bin().arg("train-ucbfair").arg("--config").arg(&config).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("greedy"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_greedy_config(dir.path());
    let mut text = std::fs::read_to_string(&config).unwrap();
    text.insert_str(0, "colour = \"blue\"\n");
    std::fs::write(&config, text).unwrap();
    let out = bin().arg("run-greedy").arg("--config").arg(&config).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn json_configs_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fig1.json");
    ok(bin().args(["init-config", "--preset", "fig1-qr"]).arg(&path).output().unwrap());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["environment"]["disparity"], "QR");
    assert_eq!(v["agent"]["kind"], "ucbfair");
}

#[test]
fn fixed_threshold_portrait_and_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_greedy_config(dir.path());
    let csv = dir.path().join("portrait.csv");
    let stdout = ok(bin()
        .arg("phase-portrait")
        .arg("--config")
        .arg(&config)
        .args(["--thresholds", "0.5,0.5", "--out"])
        .arg(&csv)
        .output()
        .unwrap());
    assert!(stdout.contains("9 cells"), "{stdout}");
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 10);

    let stdout = ok(bin()
        .arg("oracle")
        .arg("--config")
        .arg(&config)
        .args(["--state", "0.4,0.6", "--state-points", "9", "--action-points", "9"])
        .output()
        .unwrap());
    let v: Value = serde_json::from_str(stdout.trim()).unwrap();
    let (vr, vg) = (v["value_r"].as_f64().unwrap(), v["value_g"].as_f64().unwrap());
    assert!((0.0..=6.0).contains(&vr));
    assert!(vg >= 5.0 - 1e-9, "value_g {vg}");
}

fn expect_scheduled(state: &Value, horizon: f64) {
    let tau = state["tau"].as_f64().unwrap();
    let lambda = tau / horizon;
    let expected = -((1.0 - lambda) * state["loss"].as_f64().unwrap() + lambda * state["disparity"].as_f64().unwrap());
    assert!((state["scheduled_reward"].as_f64().unwrap() - expected).abs() < 1e-12, "{state}");
    assert!((state["reward"].as_f64().unwrap() - (1.0 - state["loss"].as_f64().unwrap())).abs() < 1e-15);
}

/// Accept-all client over stdio for a full episode.
#[test]
fn stdio_session() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_greedy_config(dir.path());
    let mut child = bin()
        .arg("serve")
        .arg("--config")
        .arg(&config)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut input = child.stdin.take().unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let mut recv = || -> Value { serde_json::from_str(&lines.next().unwrap().unwrap()).unwrap() };
    let mut send = |v: Value| writeln!(input, "{v}").unwrap();

    let hello = recv();
    assert_eq!(hello, json!({"type": "hello", "schema": 1, "group_count": 2, "horizon": 6, "action_dims": 2}));
    send(json!({"type": "hello", "schema": 1}));
    assert_eq!(recv()["type"], "hello");
    send(json!({"type": "reset", "q": [0.3, 0.7]}));
    assert_eq!(recv(), json!({"type": "state", "q": [0.3, 0.7], "tau": 0, "done": false}));
    for tau in 1..=6 {
        send(json!({"type": "step", "action": [0.0, 0.0]}));
        let state = recv();
        assert_eq!(state["tau"], tau);
        assert_eq!(state["done"], tau == 6);
        expect_scheduled(&state, 6.0);
    }
    send(json!({"type": "step", "action": [0.0, 0.0]}));
    assert_eq!(recv()["code"], "episode_done");
    drop(send);
    drop(input);
    assert!(child.wait().unwrap().success());
}

#[test]
fn tcp_session_and_version_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_greedy_config(dir.path());
    let mut child = bin()
        .arg("serve")
        .arg("--config")
        .arg(&config)
        .args(["--tcp", "127.0.0.1:0", "--sessions", "2"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut banner = String::new();
    stderr.read_line(&mut banner).unwrap();
    let addr = banner.trim().strip_prefix("listening on ").unwrap().to_string();

    // First session: wrong schema closes the connection.
    let stream = TcpStream::connect(&addr).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    writeln!(writer, "{}", json!({"type": "hello", "schema": 2})).unwrap();
    line.clear();
    reader.read_line(&mut line).unwrap();
    let reply: Value = serde_json::from_str(&line).unwrap();
    assert_eq!(reply["code"], "version_mismatch");
    line.clear();
    assert_eq!(reader.read_line(&mut line).unwrap(), 0, "session should be closed");

    // Second session works normally.
    let stream = TcpStream::connect(&addr).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;
    let mut recv = || {
        let mut l = String::new();
        reader.read_line(&mut l).unwrap();
        serde_json::from_str::<Value>(&l).unwrap()
    };
    assert_eq!(recv()["type"], "hello");
    writeln!(writer, "{}", json!({"type": "hello", "schema": 1})).unwrap();
    assert_eq!(recv()["type"], "hello");
    writeln!(writer, "{}", json!({"type": "step", "action": [0.5, 0.5]})).unwrap();
    assert_eq!(recv()["code"], "not_reset");
    writeln!(writer, "{}", json!({"type": "reset"})).unwrap();
    let state = recv();
    assert!(state["q"].as_array().unwrap().iter().all(|q| (0.05..=0.95).contains(&q.as_f64().unwrap())));
    writeln!(writer, "{}", json!({"type": "step", "action": [0.5, 0.5]})).unwrap();
    expect_scheduled(&recv(), 6.0);
    drop(writer);
    drop(reader);
    assert!(child.wait().unwrap().success());
}
