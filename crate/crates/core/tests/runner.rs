mod common;

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use common::write_fixture;
use seedvote::runner::{self, compare, evaluate, read_predictions, run, PREDICTIONS_FILE, REPORT_JSON, REPORT_TXT};
use seedvote::{
    AggregationStrategy, Backend, BackendConfig, BackendError, Completion, Error, InferRequest, MockBackend,
    NoiseModel, RunConfig,
};

fn mock_config(fixture: &Path, out: &Path, noise: NoiseModel) -> RunConfig {
    let mut backend = BackendConfig::mock(noise);
    backend.mock_latency = 0.25;
    RunConfig::new(fixture, backend, out)
}

fn mock_for(config: &RunConfig) -> MockBackend {
    MockBackend::new(config.backend.noise.unwrap(), config.backend.mock_latency)
}

fn noisy() -> NoiseModel {
    NoiseModel::new(0.8, 0.0, 0.15, 0.05).unwrap()
}

/// Mock that fails every call after the first `budget`.
struct Flaky {
    inner: MockBackend,
    budget: usize,
    calls: AtomicUsize,
}

impl Backend for Flaky {
    fn infer(&self, request: &InferRequest<'_>) -> Result<Completion, BackendError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.budget {
            return Err(BackendError::Unavailable { attempts: 4, message: "connection refused".into() });
        }
        self.inner.infer(request)
    }
}

#[test]
fn noiseless_run_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = write_fixture(dir.path(), 25);
    let config = mock_config(&fixture, &dir.path().join("run"), NoiseModel::noiseless());
    let outcome = run(&config, &mock_for(&config)).unwrap();
    let m = outcome.report.metrics;
    assert_eq!((m.rmse, m.accuracy, m.n_scored, m.n_unscored), (0.0, 1.0, 25, 0));
    // latency is summed over the five workers
    assert!((m.mean_latency - 1.25).abs() < 1e-12);
    assert_eq!(outcome.processed, 25);
    for file in [REPORT_JSON, REPORT_TXT, PREDICTIONS_FILE, "manifest.json", "state.json"] {
        assert!(config.out_dir.join(file).exists(), "{file}");
    }
    assert!(fs::read_to_string(config.out_dir.join(REPORT_TXT)).unwrap().contains("adopted"));
}

#[test]
fn single_worker_latency_rule() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = write_fixture(dir.path(), 10);
    let mut config = mock_config(&fixture, &dir.path().join("run"), NoiseModel::noiseless());
    config.aggregation = AggregationStrategy::Single(3);
    let report = run(&config, &mock_for(&config)).unwrap().report;
    assert!((report.metrics.mean_latency - 0.25).abs() < 1e-12);
    assert_eq!(report.ensemble_label(), "-");
}

#[test]
fn predictions_are_reproducible_and_concurrency_independent() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = write_fixture(dir.path(), 60);
    let mut outputs = Vec::new();
    for (name, cap) in [("a", 1), ("b", 8), ("c", 8)] {
        let mut config = mock_config(&fixture, &dir.path().join(name), noisy());
        config.concurrency = cap;
        run(&config, &mock_for(&config)).unwrap();
        outputs.push(fs::read(config.out_dir.join(PREDICTIONS_FILE)).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[1], outputs[2]);
}

#[test]
fn interrupted_run_resumes_to_identical_output() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = write_fixture(dir.path(), 40);

    let reference = mock_config(&fixture, &dir.path().join("reference"), noisy());
    run(&reference, &mock_for(&reference)).unwrap();

    let config = mock_config(&fixture, &dir.path().join("resumed"), noisy());
    let flaky = Flaky { inner: mock_for(&config), budget: 57, calls: AtomicUsize::new(0) };
    let err = run(&config, &flaky).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    let partial = read_predictions(&config.out_dir.join(PREDICTIONS_FILE)).unwrap();
    assert!(partial.len() < 40);

    // simulate a crash mid-write
    let predictions = config.out_dir.join(PREDICTIONS_FILE);
    let mut bytes = fs::read(&predictions).unwrap();
    bytes.extend_from_slice(b"{\"sample_id\":\"rev-");
    fs::write(&predictions, bytes).unwrap();

    let outcome = run(&config, &mock_for(&config)).unwrap();
    assert_eq!(outcome.resumed_from, partial.len());
    assert_eq!(outcome.resumed_from + outcome.processed, 40);
    assert_eq!(fs::read(&predictions).unwrap(), fs::read(reference.out_dir.join(PREDICTIONS_FILE)).unwrap());
}

#[test]
fn resume_with_different_settings_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = write_fixture(dir.path(), 5);
    let config = mock_config(&fixture, &dir.path().join("run"), noisy());
    run(&config, &mock_for(&config)).unwrap();

    let mut other = config.clone();
    other.seeds = vec![1, 2, 3];
    let err = run(&other, &mock_for(&other)).unwrap_err();
    assert!(matches!(err, Error::ResumeMismatch(_)));
    assert_eq!(err.exit_code(), 4);

    let other = mock_config(&fixture, &config.out_dir, NoiseModel::noiseless());
    assert_eq!(run(&other, &mock_for(&other)).unwrap_err().exit_code(), 4);

    let changed = write_fixture(dir.path(), 6);
    let other = mock_config(&changed, &config.out_dir, noisy());
    assert_eq!(run(&other, &mock_for(&other)).unwrap_err().exit_code(), 4);
}

#[test]
fn median_of_five_beats_single_worker() {
    // exact expectations over uniform truth: 0.2887 (median of 5) vs 0.8885 (single)
    let dir = tempfile::tempdir().unwrap();
    let fixture = write_fixture(dir.path(), 2000);
    let ensemble = mock_config(&fixture, &dir.path().join("ensemble"), noisy());
    let ensemble_report = run(&ensemble, &mock_for(&ensemble)).unwrap().report;
    let mut single = mock_config(&fixture, &dir.path().join("single"), noisy());
    single.aggregation = AggregationStrategy::Single(1);
    let single_report = run(&single, &mock_for(&single)).unwrap().report;

    let e = ensemble_report.metrics.rmse;
    let s = single_report.metrics.rmse;
    assert!(e < s, "median {e} vs single {s}");
    assert!((e - 0.2887).abs() < 0.08, "median {e}");
    assert!((s - 0.8885).abs() < 0.08, "single {s}");

    let comparison = compare(&single.out_dir, &ensemble.out_dir).unwrap();
    assert!(comparison.rows[0].lift.unwrap() > 0.5);
}

#[test]
fn evaluate_rescores_and_detects_changed_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = write_fixture(dir.path(), 30);
    let config = mock_config(&fixture, &dir.path().join("run"), noisy());
    let first = run(&config, &mock_for(&config)).unwrap().report;
    fs::remove_file(config.out_dir.join(REPORT_JSON)).unwrap();
    let again = evaluate(&config.out_dir).unwrap();
    assert_eq!(first, again);
    assert_eq!(runner::load_report(&config.out_dir).unwrap(), again);

    let mut text = fs::read_to_string(&fixture).unwrap();
    text = text.replacen("Review number 0.", "Review number zero.", 1);
    fs::write(&fixture, text).unwrap();
    assert_eq!(evaluate(&config.out_dir).unwrap_err().exit_code(), 4);
}

#[test]
fn strict_mode_fails_on_unscored_samples() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = write_fixture(dir.path(), 5);
    let mut config = mock_config(&fixture, &dir.path().join("run"), NoiseModel::new(0.0, 0.0, 0.0, 1.0).unwrap());
    config.strict = true;
    // nothing can be scored at all
    assert!(matches!(run(&config, &mock_for(&config)).unwrap_err(), Error::NothingScored));

    let fixture = write_fixture(dir.path(), 40);
    let mut lenient = mock_config(&fixture, &dir.path().join("lenient"), NoiseModel::new(0.5, 0.0, 0.0, 0.5).unwrap());
    lenient.seeds = vec![7];
    let report = run(&lenient, &mock_for(&lenient)).unwrap().report;
    assert!(report.metrics.n_unscored > 0 && report.metrics.n_scored > 0);

    let mut strict = lenient.clone();
    strict.out_dir = dir.path().join("strict");
    strict.strict = true;
    assert_eq!(run(&strict, &mock_for(&strict)).unwrap_err().exit_code(), 2);
    // the report is still written
    assert_eq!(runner::load_report(&strict.out_dir).unwrap().metrics, report.metrics);
}

#[test]
fn compare_refuses_runs_on_different_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let a = mock_config(&write_fixture(dir.path(), 5), &dir.path().join("a"), noisy());
    let b = mock_config(&write_fixture(dir.path(), 6), &dir.path().join("b"), noisy());
    run(&a, &mock_for(&a)).unwrap();
    run(&b, &mock_for(&b)).unwrap();
    assert!(matches!(compare(&a.out_dir, &b.out_dir).unwrap_err(), Error::FixtureMismatch { .. }));
}
