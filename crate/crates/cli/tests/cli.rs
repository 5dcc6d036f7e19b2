use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use urbanform::index::VectorIndex;

fn urbanform(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_urbanform"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env_remove("MS_ARTIFACT_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let cfg = json!({
        "seed": 2,
        "artifact_dir": dir.join("artifacts"),
        "synth": {"count": 32, "image_size": 32},
        "cae": {"encoder_channels": [4, 4], "input_size": 32},
        "train": {"epochs": 2, "batch_size": 8},
        "som": {
            "strip": {"topology": {"kind": "strip", "nodes": 6}, "epochs": 5, "seed": 1},
            "grid": {"topology": {"kind": "grid", "rows": 2, "cols": 2}, "epochs": 5, "seed": 1},
        },
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn embed_before_train_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = urbanform(&["embed"], &cfg);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train required"));
}

#[test]
fn stage_by_stage_then_query() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    for stage in ["synth", "train", "embed", "index", "som", "topology", "export"] {
        let out = urbanform(&[stage], &cfg);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout(&out).starts_with(&format!("{stage}: completed")), "{}", stdout(&out));
    }
    let again = urbanform(&["synth"], &cfg);
    assert!(stdout(&again).contains("up-to-date"));
    let forced = urbanform(&["synth", "--force"], &cfg);
    assert!(stdout(&forced).contains("completed"));

    let index = VectorIndex::from_bytes(&std::fs::read(dir.path().join("artifacts/index/index.msvx")).unwrap()).unwrap();
    let id = index.ids()[5].clone();
    let out = urbanform(&["query", "--place-id", &id, "--json"], &cfg);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let want = index.knn_by_id(&id, 6, true).unwrap();
    assert_eq!(v, serde_json::to_value(&want).unwrap());

    let out = urbanform(&["query", "--place-id", &id, "-k", "3"], &cfg);
    let lines: Vec<String> = stdout(&out).lines().map(str::to_owned).collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with(&format!("1\t{}\t", want.neighbors[0].place_id)));

    let out = urbanform(&["query", "--place-id", "nowhere"], &cfg);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_builds_everything_and_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = urbanform(&["run"], &cfg);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).lines().count(), 7);
    assert!(dir.path().join("artifacts/export/geomap.geojson").is_file());

    let out = urbanform(&["config"], &cfg);
    let printed: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed["synth"]["count"], 32);
    assert_eq!(printed["train"]["optimizer"], "sgd_momentum");
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    assert_eq!(urbanform(&["frobnicate"], &cfg).status.code(), Some(2));
    assert_eq!(urbanform(&["export", "--bbox", "1,2"], &cfg).status.code(), Some(2));
    assert_eq!(urbanform(&["train", "--optimizer", "rmsprop"], &cfg).status.code(), Some(2));
    let missing = dir.path().join("absent.json");
    assert_eq!(urbanform(&["config"], &missing).status.code(), Some(1));
}
