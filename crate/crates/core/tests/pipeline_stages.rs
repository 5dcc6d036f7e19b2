use std::fs;
use std::path::Path;

use urbanform::cae::CaeConfig;
use urbanform::pipeline::{paths, run_all, run_stage, PipelineConfig, Stage, StageOptions, StageStatus};
use urbanform::som::SomConfig;
use urbanform::Error;

fn small_config(dir: &Path) -> PipelineConfig {
    let mut c = PipelineConfig {
        seed: 3,
        artifact_dir: dir.to_path_buf(),
        ..Default::default()
    };
    c.synth.count = 24;
    c.synth.image_size = 32;
    c.cae = CaeConfig {
        encoder_channels: vec![4, 4],
        input_size: 32,
        ..Default::default()
    };
    c.train.epochs = 2;
    c.train.batch_size = 8;
    c.som.strip = SomConfig::strip(6, 5, 1);
    c.som.grid = Some(SomConfig::grid(2, 3, 5, 1));
    c
}

#[test]
fn missing_upstream_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let err = run_stage(Stage::Embed, &cfg, &StageOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Prerequisite { .. }));
    let msg = err.to_string();
    assert!(msg.contains("required"), "{msg}");
    // the corpus is checked after the model
    assert!(msg.contains("train"), "{msg}");
}

#[test]
fn second_run_is_up_to_date_and_force_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let opts = StageOptions::default();
    let first = run_all(&cfg, &opts).unwrap();
    assert!(first.iter().all(|r| r.status == StageStatus::Completed));
    for rel in [paths::MODEL, paths::VECTORS, paths::GRAPH_JSON, paths::GEOMAP, paths::MONTAGE_PNG] {
        assert!(dir.path().join(rel).is_file(), "{rel}");
    }
    let second = run_all(&cfg, &opts).unwrap();
    assert!(second.iter().all(|r| r.status == StageStatus::UpToDate));

    let forced = run_stage(Stage::Som, &cfg, &StageOptions { force: true, ..Default::default() }).unwrap();
    assert_eq!(forced.status, StageStatus::Completed);
    assert_eq!(forced.outputs, first[4].outputs);
}

#[test]
fn tampered_output_or_changed_settings_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    run_all(&cfg, &StageOptions::default()).unwrap();

    fs::write(dir.path().join(paths::GRAPH_JSON), b"{}").unwrap();
    let r = run_stage(Stage::Topology, &cfg, &StageOptions::default()).unwrap();
    assert_eq!(r.status, StageStatus::Completed);

    cfg.topology.threshold = 0.5;
    let r = run_stage(Stage::Topology, &cfg, &StageOptions::default()).unwrap();
    assert_eq!(r.status, StageStatus::Completed);
    // an unrelated change leaves training untouched
    let r = run_stage(Stage::Train, &cfg, &StageOptions::default()).unwrap();
    assert_eq!(r.status, StageStatus::UpToDate);
}

#[test]
fn identical_configs_give_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_all(&small_config(a.path()), &StageOptions::default()).unwrap();
    let rb = run_all(&small_config(b.path()), &StageOptions::default()).unwrap();
    for (x, y) in ra.iter().zip(&rb) {
        assert_eq!(x.outputs, y.outputs, "{}", x.stage);
    }
}

#[test]
fn concurrent_run_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let _held = urbanform::artifact::DirLock::acquire(dir.path()).unwrap();
    let err = run_stage(Stage::Synth, &cfg, &StageOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Locked(_)));
}

#[test]
fn resumed_training_matches_a_single_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut cfg = small_config(a.path());
    cfg.train.epochs = 4;
    run_stage(Stage::Synth, &cfg, &StageOptions::default()).unwrap();
    let full = run_stage(Stage::Train, &cfg, &StageOptions::default()).unwrap();

    let mut half = small_config(b.path());
    half.train.epochs = 2;
    run_stage(Stage::Synth, &half, &StageOptions::default()).unwrap();
    run_stage(Stage::Train, &half, &StageOptions::default()).unwrap();
    let ckpt = b.path().join("half.msck");
    fs::copy(b.path().join(paths::MODEL), &ckpt).unwrap();
    half.train.epochs = 4;
    let resumed = run_stage(Stage::Train, &half, &StageOptions { resume: Some(ckpt), ..Default::default() }).unwrap();
    assert_eq!(full.outputs[paths::MODEL], resumed.outputs[paths::MODEL]);
}
