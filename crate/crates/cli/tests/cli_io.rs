//! Exit-code and file-format behavior of the binary.

use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pwgp"))
}

#[test]
fn synth_without_directory_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = bin()
        .args(["synth", "--out", missing.to_str().unwrap(), "--seed", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn synth_with_create_succeeds_and_records_seed() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("data");
    let out = bin()
        .args([
            "synth", "--out", target.to_str().unwrap(), "--create", "--seed", "42",
            "--reps", "3", "--points-per-rep", "5", "--dense-grid-per-rep", "20",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let meta = fs::read_to_string(target.join("train.meta.json")).unwrap();
    assert!(meta.contains("\"seed\": 42"));
    let train = fs::read_to_string(target.join("train.csv")).unwrap();
    assert!(train.starts_with("repetition_index,t,y_1"));
    // 3 repetitions x 5 points + header.
    assert_eq!(train.lines().count(), 16);
}

#[test]
fn fit_with_oversized_batch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    bin()
        .args([
            "synth", "--out", data.to_str().unwrap(), "--create", "--seed", "1",
            "--reps", "3", "--points-per-rep", "5", "--dense-grid-per-rep", "20",
        ])
        .status()
        .unwrap();
    let out = bin()
        .args([
            "fit", "--data", data.join("train.csv").to_str().unwrap(),
            "--out", dir.path().join("m.json").to_str().unwrap(),
            "--batch-size", "10", "--steps", "5",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch size"));
}

#[test]
fn fit_with_missing_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "fit", "--data", dir.path().join("absent.csv").to_str().unwrap(),
            "--out", dir.path().join("m.json").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn score_with_mismatched_grid_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("m.json");
    let trajs = dir.path().join("t.csv");
    bin()
        .args([
            "synth", "--out", data.to_str().unwrap(), "--create", "--seed", "2",
            "--reps", "3", "--points-per-rep", "5", "--dense-grid-per-rep", "20",
        ])
        .status()
        .unwrap();
    bin()
        .args([
            "fit", "--data", data.join("train.csv").to_str().unwrap(),
            "--out", model.to_str().unwrap(), "--batch-size", "1", "--steps", "5",
        ])
        .status()
        .unwrap();
    bin()
        .args([
            "sample", "--model", model.to_str().unwrap(),
            "--data", data.join("train.csv").to_str().unwrap(),
            "--out", trajs.to_str().unwrap(), "--reps", "2", "--samples-per-rep", "10",
        ])
        .status()
        .unwrap();
    // Corrupt one grid time so the file no longer matches the model grid.
    let text = fs::read_to_string(&trajs).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut fields: Vec<String> = lines[3].split(',').map(String::from).collect();
    fields[1] = "2.5000000000000000e-1".into();
    lines[3] = fields.join(",");
    fs::write(&trajs, lines.join("\n") + "\n").unwrap();

    let out = bin()
        .args([
            "score", "--model", model.to_str().unwrap(),
            "--data", data.join("train.csv").to_str().unwrap(),
            "--trajectories", trajs.to_str().unwrap(),
            "--out", dir.path().join("s.json").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid"));
}

#[test]
fn sample_noise_flag_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("m.json");
    bin()
        .args([
            "synth", "--out", data.to_str().unwrap(), "--create", "--seed", "3",
            "--reps", "4", "--points-per-rep", "8", "--dense-grid-per-rep", "24",
        ])
        .status()
        .unwrap();
    bin()
        .args([
            "fit", "--data", data.join("train.csv").to_str().unwrap(),
            "--out", model.to_str().unwrap(), "--batch-size", "2", "--steps", "20",
        ])
        .status()
        .unwrap();
    let sample = |out_name: &str, extra: &[&str]| {
        let path = dir.path().join(out_name);
        let mut args = vec![
            "sample".to_string(),
            "--model".into(), model.to_str().unwrap().into(),
            "--data".into(), data.join("train.csv").to_str().unwrap().into(),
            "--out".into(), path.to_str().unwrap().into(),
            "--reps".into(), "2".into(),
            "--samples-per-rep".into(), "10".into(),
            "--seed".into(), "7".into(),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        assert!(bin().args(&args).status().unwrap().success());
        fs::read_to_string(path).unwrap()
    };
    let with_noise = sample("with.csv", &[]);
    let without_noise = sample("without.csv", &["--no-output-noise"]);
    assert_ne!(with_noise, without_noise);
    let meta = fs::read_to_string(dir.path().join("without.meta.json")).unwrap();
    assert!(meta.contains("\"no_output_noise\": true"));
}

#[test]
fn score_ranks_model_mean_highest() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("m.json");
    let trajs = dir.path().join("t.csv");
    bin()
        .args([
            "synth", "--out", data.to_str().unwrap(), "--create", "--seed", "4",
            "--reps", "4", "--points-per-rep", "8", "--dense-grid-per-rep", "24",
        ])
        .status()
        .unwrap();
    bin()
        .args([
            "fit", "--data", data.join("train.csv").to_str().unwrap(),
            "--out", model.to_str().unwrap(), "--batch-size", "2", "--steps", "20",
        ])
        .status()
        .unwrap();
    bin()
        .args([
            "sample", "--model", model.to_str().unwrap(),
            "--data", data.join("train.csv").to_str().unwrap(),
            "--out", trajs.to_str().unwrap(), "--reps", "2", "--samples-per-rep", "12",
            "--count", "3", "--seed", "1",
        ])
        .status()
        .unwrap();
    assert!(bin()
        .args([
            "score", "--model", model.to_str().unwrap(),
            "--data", data.join("train.csv").to_str().unwrap(),
            "--trajectories", trajs.to_str().unwrap(),
            "--out", dir.path().join("s.json").to_str().unwrap(),
        ])
        .status()
        .unwrap()
        .success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
    let scores = report["scores"].as_array().unwrap();
    assert_eq!(scores.len(), 3);
    // Sorted best-first.
    let lls: Vec<f64> = scores
        .iter()
        .map(|s| s["log_likelihood"].as_f64().unwrap())
        .collect();
    assert!(lls.windows(2).all(|w| w[0] >= w[1]));
}
