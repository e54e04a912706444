use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use adscreen_core::signal::{AudioBuffer, ACOUSTIC_DIM};
use serde_json::Value;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn adscreen(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adscreen"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn features_reports_vector_segments_and_pauses() {
    let dir = tempfile::tempdir().unwrap();
    let sr = 16_000u32;
    // 0.5 s tone, 0.6 s silence, 0.5 s tone
    let samples: Vec<f64> = (0..(1.6 * f64::from(sr)) as usize)
        .map(|i| {
            let t = i as f64 / f64::from(sr);
            if (0.5..1.1).contains(&t) { 0.0 } else { 0.5 * (2.0 * PI * 200.0 * t).sin() }
        })
        .collect();
    let wav = dir.path().join("tone.wav");
    std::fs::write(&wav, AudioBuffer::new(samples, sr).to_wav_bytes()).unwrap();
    let out = dir.path().join("f.json");
    let config = root().join("adscreen.toml");
    ok(adscreen(
        &["features", "--wav", wav.to_str().unwrap(), "--out", out.to_str().unwrap(), "--config", config.to_str().unwrap()],
        dir.path(),
    ));
    let doc = read_json(&out);
    assert_eq!(doc["sample_rate"], 16_000);
    assert_eq!(doc["vector"].as_array().unwrap().len(), ACOUSTIC_DIM);
    // 158 frames: two full segments, the short tail folds into the third
    assert_eq!(doc["segments"].as_array().unwrap().len(), 3);
    let pauses = doc["pauses"].as_array().unwrap();
    assert_eq!(pauses.len(), 1);
    let (a, b) = (pauses[0][0].as_f64().unwrap(), pauses[0][1].as_f64().unwrap());
    assert!((a - 0.5).abs() < 0.05 && (b - 1.1).abs() < 0.05, "{a} {b}");
    assert!(doc["prosody"].as_array().unwrap().len() > 100);
}

#[test]
fn simulate_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s).to_str().unwrap().to_owned();
    let profiles = root().join("data/profiles.toml");
    let config = root().join("adscreen.toml");
    let (profiles, config) = (profiles.to_str().unwrap(), config.to_str().unwrap());
    for (out, seed) in [("train", "1"), ("held", "2")] {
        let msg = ok(adscreen(
            &["simulate", "--profiles", profiles, "--sessions", "3", "--seed", seed, "--out", &d(out), "--pseudo-audio"],
            dir.path(),
        ));
        assert!(msg.contains("12 sessions"), "{msg}");
    }
    let again = tempfile::tempdir().unwrap();
    let out = again.path().to_str().unwrap();
    ok(adscreen(&["simulate", "--profiles", profiles, "--sessions", "3", "--seed", "1", "--out", out, "--pseudo-audio"], dir.path()));
    assert_eq!(
        std::fs::read(dir.path().join("train/manifest.csv")).unwrap(),
        std::fs::read(again.path().join("manifest.csv")).unwrap()
    );

    ok(adscreen(
        &["train", "--corpus", &d("train"), "--classifier", "audio", "--epochs", "3", "--seed", "5", "--out", &d("models"), "--config", config],
        dir.path(),
    ));
    let report = read_json(&dir.path().join("models/training_report.json"));
    assert_eq!(report["blocks"], 12);
    assert_eq!(report["targets"].as_array().unwrap().len(), 1);
    assert!(dir.path().join("models/detectors.json").exists());
    assert!(!dir.path().join("models/dialogue_act.json").exists());

    ok(adscreen(
        &["train", "--corpus", &d("train"), "--classifier", "dialogue_act", "--epochs", "3", "--out", &d("models"), "--config", config],
        dir.path(),
    ));
    assert!(dir.path().join("models/dialogue_act.json").exists());

    ok(adscreen(
        &["eval", "--corpus", &d("held"), "--models", &d("models"), "--report", &d("report.json"), "--config", config],
        dir.path(),
    ));
    let rep = read_json(&dir.path().join("report.json"));
    assert_eq!(rep["sessions"], 12);
    assert_eq!(rep["blocks"], 12);
    let confusion: u64 = rep["confusion"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap()).map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(confusion, 12);
    assert_eq!(rep["per_classifier"].as_object().unwrap().len(), 4);
}

#[test]
fn bad_input_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let config = root().join("adscreen.toml");
    let config = config.to_str().unwrap();
    let cases: [&[&str]; 4] = [
        &["train", "--corpus", ".", "--classifier", "sentiment", "--out", "m", "--config", config],
        &["eval", "--corpus", ".", "--models", "nowhere", "--report", "r.json", "--config", config],
        &["features", "--wav", "missing.wav", "--out", "f.json", "--config", config],
        &["chat", "--config", "absent.toml"],
    ];
    for args in cases {
        let out = adscreen(args, dir.path());
        assert!(!out.status.success(), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"), "{args:?}");
    }
    assert!(!adscreen(&["simulate", "--out", "x"], dir.path()).status.success());
}

#[test]
fn chat_answers_and_logs_on_end_of_input() {
    use std::io::Write;
    use std::process::Stdio;
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(root().join("adscreen.toml")).unwrap();
    let data = root().join("data");
    let cfg = text
        .replace("\"data/", &format!("\"{}/", data.display()))
        .replace("models_dir = \"models\"", "models_dir = \"none\"");
    std::fs::write(dir.path().join("adscreen.toml"), cfg).unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_adscreen"))
        .arg("chat")
        .current_dir(dir.path())
        .env("RUST_LOG", "error")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"hello there\nwhat do you like to eat?\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("robot [")).count(), 2, "{stdout}");
    let log = std::fs::read_to_string(dir.path().join("medical_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
    assert!(log.contains("session_summary"), "{log}");
}
