use std::path::Path;
use std::process::{Command, Output};

use anycostfl::codec::{encode_update, plan_from_beta, QuantizedLayer, UpdateHeader};
use anycostfl::{QuantizedUpdate, RatePredictor};
use serde_json::Value;
use tempfile::TempDir;

fn anycostfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anycostfl"))
        .args(args)
        .env_remove("ACFL_THREADS")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = r#"{"seed": 5, "devices": 6, "rounds": 3}"#;

#[test]
fn run_writes_one_csv_row_per_round() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = anycostfl(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "round,loss,accuracy,latency_max_s,energy_total_j,uplink_bytes,gain_g,skipped");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("3,"));
}

#[test]
fn runs_are_reproducible_and_seed_flag_overrides() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = anycostfl(&["run", "--config", &cfg]).stdout;
    let b = anycostfl(&["run", "--config", &cfg]).stdout;
    let c = anycostfl(&["run", "--config", &cfg, "--seed", "6"]).stdout;
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn json_output_mirrors_csv() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let json_path = dir.path().join("m.json");
    let csv_path = dir.path().join("m.csv");
    for (path, format) in [(&json_path, "json"), (&csv_path, "csv")] {
        let out = anycostfl(&["run", "--config", &cfg, "--format", format, "--output", path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
    }
    let rows: Vec<Value> = serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(rows.len(), 3);
    for (row, line) in rows.iter().zip(csv.lines().skip(1)) {
        let loss: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(row["loss"].as_f64().unwrap(), loss);
    }
}

#[test]
fn fedavg_mode_uploads_full_precision() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = anycostfl(&["run", "--config", &cfg, "--mode", "fedavg", "--format", "json"]);
    assert_eq!(out.status.code(), Some(0));
    let rows: Vec<Value> = serde_json::from_slice(&out.stdout).unwrap();
    // 10-32-32-3 network: 1507 parameters, six devices, four bytes each
    assert!(rows.iter().all(|r| r["uplink_bytes"] == 6 * 4 * 1507 && r["gain_g"] == 1.0));
}

#[test]
fn config_errors_exit_with_2_and_list_every_problem() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), r#"{"rounds": 3, "colour": "red", "bounds": {"alpha_min": 1.5}}"#);
    let out = anycostfl(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("colour"), "{err}");
    assert!(err.contains("seed"), "{err}");
    assert!(err.contains("alpha_min"), "{err}");

    let out = anycostfl(&["run", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = anycostfl(&["run", "--config", &cfg, "--format", "xml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_3() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"seed": 1, "devices": 2, "rounds": 1,
            "dataset": {"kind": "idx", "train_images": "/nonexistent/a", "train_labels": "/nonexistent/b",
                        "test_images": "/nonexistent/c", "test_labels": "/nonexistent/d"}}"#,
    );
    let out = anycostfl(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn calibrate_writes_a_reloadable_predictor() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let path = dir.path().join("pred.json");
    let out = anycostfl(&["calibrate", "--config", &cfg, "--output", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let pred = RatePredictor::load(&path).unwrap();
    assert!(pred.curve.windows(2).all(|w| w[0].0 < w[1].0));
    let again = RatePredictor::load(&path).unwrap();
    for beta in [0.01, 0.05, 0.3] {
        assert_eq!(plan_from_beta(Some(&pred), beta).unwrap(), plan_from_beta(Some(&again), beta).unwrap());
    }

    // the predictor plugs back into a run
    let cfg = write_config(
        dir.path(),
        &format!(r#"{{"seed": 5, "devices": 6, "rounds": 2, "predictor": {:?}}}"#, path.to_str().unwrap()),
    );
    assert_eq!(anycostfl(&["run", "--config", &cfg]).status.code(), Some(0));

    let out = anycostfl(&["calibrate", "--seed", "1", "--samples", "0", "--output", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn inspect_reads_checkpoints_and_updates() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let ckpt = dir.path().join("model.acfm");
    let out = anycostfl(&["run", "--config", &cfg, "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let out = anycostfl(&["inspect", ckpt.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["kind"], "checkpoint");
    assert_eq!(v["model_version"], 3);
    assert_eq!(v["params"], 1507);

    let q = QuantizedUpdate {
        layers: vec![QuantizedLayer {
            element_count: 6,
            u_min: 0.5,
            u_max: 1.5,
            levels: 4,
            mask: vec![true, false, true, false, false, true],
            level_indices: vec![0, 2, 4],
            signs: vec![false, true, false],
        }],
    };
    let header = UpdateHeader { alpha: 0.5, beta: 0.25, shapes: vec![(3, 1)] };
    let upd = dir.path().join("update.acfl");
    std::fs::write(&upd, encode_update(&q, &header).unwrap().bytes).unwrap();
    let out = anycostfl(&["inspect", upd.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["kind"], "update");
    assert_eq!(v["alpha"], 0.5);
    assert_eq!(v["layers"][0]["nonzero"], 3);

    let junk = dir.path().join("junk");
    std::fs::write(&junk, b"ACFLxx").unwrap();
    assert_eq!(anycostfl(&["inspect", junk.to_str().unwrap()]).status.code(), Some(3));
}
