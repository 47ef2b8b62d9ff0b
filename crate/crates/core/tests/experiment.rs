use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;

use epf_core::data::write_dataset;
use epf_core::experiment::{resume, resume_with_limit, run_experiment, ExperimentError, ModelKind, RunConfig};
use epf_core::hyperopt::SpacePreset;
use epf_core::neural::TrainSettings;
use epf_core::synthetic::{generate, SyntheticConfig};

fn setup(dir: &Path) -> RunConfig {
    let ds = generate(&SyntheticConfig { days: 210, seed: 11, ..Default::default() });
    let data = dir.join("market.csv");
    write_dataset(&ds, File::create(&data).unwrap()).unwrap();
    let mut c = RunConfig::new(&data, "synth", dir.join("run"));
    c.models = vec![ModelKind::Naive, ModelKind::Lear, ModelKind::Dnn24];
    c.calibration_days = 182;
    c.test_days = 6;
    c.hyperopt_trials = 3;
    c.space = SpacePreset::Small;
    c.train = TrainSettings { max_epochs: 30, ..Default::default() };
    c.seed = 5;
    c
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn interrupted_run_matches_uninterrupted() {
    let tmp = tempfile::tempdir().unwrap();
    let mut full = setup(tmp.path());
    full.test_days = 21;
    let report = run_experiment(&full).unwrap();
    assert!(report.complete);
    assert_eq!(report.metrics.len(), 3 * 25);
    assert!((report.rmae("naive", "joint").unwrap() - 1.0).abs() < 1e-12);
    assert!(report.gw("lear", "naive").is_some());
    assert!(report.gw("lear", "lear").is_none());

    let parted = RunConfig { out: tmp.path().join("parted"), window_limit: Some(2), ..full.clone() };
    let partial = run_experiment(&parted).unwrap();
    assert!(!partial.complete);
    assert_eq!(partial.rows, vec![2, 2, 2]);
    assert!(!parted.out.join("metrics.csv").exists());

    // Simulate a crash mid-write of a forecast row and mid-search.
    let mut f = OpenOptions::new().append(true).open(parted.out.join("forecasts_lear.csv")).unwrap();
    write!(f, "2015-07-01,1.0,2.").unwrap();
    drop(f);
    fs::remove_file(parted.out.join("hyperparams_dnn24.json")).unwrap();
    fs::remove_file(parted.out.join("forecasts_dnn24.csv")).unwrap();
    let log = read(&parted.out.join("trials_dnn24.csv"));
    let kept: Vec<&str> = log.lines().take(2).collect();
    fs::write(parted.out.join("trials_dnn24.csv"), kept.join("\n") + "\n").unwrap();

    let mid = resume_with_limit(&parted.out, Some(9)).unwrap();
    assert_eq!(mid.rows, vec![9, 9, 9]);
    let done = resume(&parted.out).unwrap();
    assert!(done.complete);

    for name in [
        "metrics.csv",
        "gw_matrix.csv",
        "forecasts_naive.csv",
        "forecasts_lear.csv",
        "forecasts_dnn24.csv",
        "trials_dnn24.csv",
        "hyperparams_dnn24.json",
    ] {
        assert_eq!(read(&full.out.join(name)), read(&parted.out.join(name)), "{name} differs");
    }
    assert_eq!(report.metrics, done.metrics);
}

#[test]
fn rerun_is_a_no_op() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = setup(tmp.path());
    c.models = vec![ModelKind::Naive, ModelKind::Lear];
    let first = run_experiment(&c).unwrap();
    let forecasts = read(&c.out.join("forecasts_lear.csv"));
    let second = run_experiment(&c).unwrap();
    assert_eq!(first, second);
    assert_eq!(forecasts, read(&c.out.join("forecasts_lear.csv")));
    // Six test days are too few for the pairwise test; the cells stay empty.
    assert!(first.gw("lear", "naive").is_none());
}

#[test]
fn changed_configuration_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = setup(tmp.path());
    c.models = vec![ModelKind::Naive];
    run_experiment(&c).unwrap();
    let other = RunConfig { seed: 6, ..c.clone() };
    match run_experiment(&other) {
        Err(ExperimentError::ManifestMismatch(msg)) => assert!(msg.contains("seed"), "{msg}"),
        r => panic!("expected a mismatch, got {r:?}"),
    }
}

#[test]
fn foreign_checkpoint_rows_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = setup(tmp.path());
    c.models = vec![ModelKind::Naive];
    c.window_limit = Some(2);
    run_experiment(&c).unwrap();
    let p = c.out.join("forecasts_naive.csv");
    let mut lines: Vec<String> = read(&p).lines().map(String::from).collect();
    lines.swap(1, 2);
    fs::write(&p, lines.join("\n") + "\n").unwrap();
    assert!(matches!(resume(&c.out), Err(ExperimentError::CorruptCheckpoint { .. })));
}

#[test]
fn single_model_has_empty_gw_matrix() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = setup(tmp.path());
    c.models = vec![ModelKind::Lear];
    let r = run_experiment(&c).unwrap();
    assert!(r.gw.is_empty());
    assert_eq!(r.metrics.len(), 25);
    assert_eq!(read(&c.out.join("gw_matrix.csv")).lines().count(), 1);
}
