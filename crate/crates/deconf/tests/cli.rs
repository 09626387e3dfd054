//! Black-box tests of the binary: exit codes, determinism, and the
//! simulate/train/eval pipeline contract.

use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn deconf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deconf"))
        .args(args)
        .output()
        .unwrap()
}

fn sha(path: &Path) -> String {
    format!("{:x}", Sha256::digest(std::fs::read(path).unwrap()))
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

#[test]
fn simulate_writes_expected_row_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"scenario": "orthogonal", "n": 100, "seed": 1}"#,
    );
    let out = dir.path().join("data");
    let result = deconf(&["simulate", "--config", &config, "--out", &out.display().to_string()]);
    assert!(result.status.success(), "{result:?}");
    let items = std::fs::read_to_string(out.join("items.jsonl")).unwrap();
    assert_eq!(items.lines().count(), 100);
    assert!(out.join("pairs.jsonl").exists());
    let stdout = String::from_utf8(result.stdout).unwrap();
    assert!(stdout.contains("orthogonal") && stdout.contains("100"), "{stdout}");
}

#[test]
fn missing_seed_exits_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"scenario": "orthogonal", "n": 100}"#);
    let out = dir.path().join("data");
    let result = deconf(&["simulate", "--config", &config, "--out", &out.display().to_string()]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8(result.stderr).unwrap();
    assert!(stderr.contains("seed"), "{stderr}");
}

#[test]
fn unreadable_config_exits_3() {
    let result = deconf(&["simulate", "--config", "/nonexistent/config.json", "--out", "/tmp/x"]);
    assert_eq!(result.status.code(), Some(3));
}

#[test]
fn usage_error_exits_2() {
    let result = deconf(&["simulate"]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"scenario": "entangled", "n": 300, "seed": 11}"#,
    );
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    for out in [&out1, &out2] {
        let result = deconf(&["simulate", "--config", &config, "--out", &out.display().to_string()]);
        assert!(result.status.success());
    }
    assert_eq!(sha(&out1.join("items.jsonl")), sha(&out2.join("items.jsonl")));
    assert_eq!(sha(&out1.join("pairs.jsonl")), sha(&out2.join("pairs.jsonl")));
}

#[test]
fn deconfound_iv_with_self_instrument_matches_ols() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"scenario": "entangled", "n": 1000, "seed": 2}"#,
    );
    let data = dir.path().join("data");
    assert!(deconf(&["simulate", "--config", &config, "--out", &data.display().to_string()])
        .status
        .success());
    let data = data.display().to_string();
    let ols_out = dir.path().join("ols.json");
    let iv_out = dir.path().join("iv.json");
    assert!(deconf(&[
        "deconfound", "--data", &data, "--method", "ols",
        "--confounder", "popularity", "--out", &ols_out.display().to_string(),
    ])
    .status
    .success());
    assert!(deconf(&[
        "deconfound", "--data", &data, "--method", "iv", "--confounder", "popularity",
        "--instruments", "popularity", "--out", &iv_out.display().to_string(),
    ])
    .status
    .success());
    let alpha = |path: &Path| -> f64 {
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        v["alpha"]["popularity"].as_f64().unwrap()
    };
    assert!((alpha(&ols_out) - alpha(&iv_out)).abs() < 1e-10);
}

#[test]
fn weak_data_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"scenario": "orthogonal", "n": 200, "seed": 4}"#,
    );
    let data = dir.path().join("data");
    assert!(deconf(&["simulate", "--config", &config, "--out", &data.display().to_string()])
        .status
        .success());
    // more folds than the train split can fill leaves folds under 2 rows
    let result = deconf(&[
        "deconfound", "--data", &data.display().to_string(), "--method", "dml",
        "--confounder", "popularity", "--folds", "100",
        "--out", &dir.path().join("x.json").display().to_string(),
    ]);
    assert_eq!(result.status.code(), Some(4), "{result:?}");
}

#[test]
fn sweep_grid_size_matches_grid_string() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"scenario": "orthogonal", "n": 400, "seed": 3}"#,
    );
    let data = dir.path().join("data");
    assert!(deconf(&["simulate", "--config", &config, "--out", &data.display().to_string()])
        .status
        .success());
    let reports = dir.path().join("reports");
    let result = deconf(&[
        "sweep", "--data", &data.display().to_string(),
        "--grid", "logspace(-3,3,13)", "--out", &reports.display().to_string(),
    ]);
    assert!(result.status.success(), "{result:?}");
    let csv = std::fs::read_to_string(reports.join("dataset_sweep_0-0.csv")).unwrap();
    // header plus 13 grid rows
    assert_eq!(csv.lines().count(), 14);
}

#[test]
fn pipeline_report_checksum_is_pinned() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"scenario": "entangled", "n": 500, "seed": 42}"#,
    );
    let data = dir.path().join("data");
    let model = dir.path().join("model.json");
    let eval = dir.path().join("eval.json");
    assert!(deconf(&["simulate", "--config", &config, "--out", &data.display().to_string()])
        .status
        .success());
    assert!(deconf(&[
        "train", "--data", &data.display().to_string(),
        "--out", &model.display().to_string(), "--lambda", "0.001",
    ])
    .status
    .success());
    assert!(deconf(&[
        "eval", "--data", &data.display().to_string(), "--model", &model.display().to_string(),
        "--out", &eval.display().to_string(),
    ])
    .status
    .success());
    // golden value established by the first verified run of this pipeline
    assert_eq!(
        sha(&eval),
        "d81f31ac723b4adb03525cf3b3662926f42ef739ce15c683c59c73dff6f4bdce",
    );
    assert_eq!(
        sha(&model),
        "a02ab2c2d2308c3914c38d217e5679f85163c7b14af5e4027039dc9d35927d46",
    );
}

#[test]
fn jsonl_round_trip_through_ingest_validates() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"scenario": "orthogonal", "n": 80, "seed": 9}"#,
    );
    let data = dir.path().join("data");
    assert!(deconf(&["simulate", "--config", &config, "--out", &data.display().to_string()])
        .status
        .success());
    let round = dir.path().join("round");
    let result = deconf(&[
        "ingest", "--input", &data.join("items.jsonl").display().to_string(),
        "--format", "jsonl", "--out", &round.display().to_string(),
    ]);
    assert!(result.status.success(), "{result:?}");
    assert_eq!(sha(&data.join("items.jsonl")), sha(&round.join("items.jsonl")));
    assert_eq!(sha(&data.join("pairs.jsonl")), sha(&round.join("pairs.jsonl")));
}

#[test]
fn csv_nan_ingest_exits_2_citing_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("data.csv");
    std::fs::write(&csv_path, "e0,ctr\n0.1,0.5\n0.2,NaN\n").unwrap();
    let mapping = dir.path().join("mapping.json");
    std::fs::write(&mapping, r#"{"embedding": ["e0"], "outcome": "ctr"}"#).unwrap();
    let result = deconf(&[
        "ingest", "--input", &csv_path.display().to_string(), "--format", "csv",
        "--mapping", &mapping.display().to_string(),
        "--out", &dir.path().join("out").display().to_string(),
    ]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8(result.stderr).unwrap();
    assert!(stderr.contains("row 2"), "{stderr}");
}
