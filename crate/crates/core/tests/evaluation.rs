mod common;

use std::fs;
use std::path::{Path, PathBuf};

use chatcbm_core::classifier::{Backend, CompletionRequest, StubBackend};
use chatcbm_core::eval::{
    check_golden_fixtures, evaluate_split, load_curve, Curve, CurveSchema, EvalOptions, Monotone,
};
use chatcbm_core::intervention::CurvePoint;
use chatcbm_core::synthetic::SyntheticSpec;
use chatcbm_core::{BackendError, Error, Split};
use common::{all_candidates, fast_train, world};

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

#[test]
fn noise_free_evaluation_is_perfect_for_every_seed() {
    let spec = SyntheticSpec {
        noise: 0.0,
        ..SyntheticSpec::default()
    };
    let w = world(&spec, all_candidates(&spec));
    let test = w.data.split(Split::Test);
    let report = evaluate_split(
        &w.pipeline,
        &[],
        &test,
        &StubBackend,
        &[0, 1, 2],
        &EvalOptions::default(),
    )
    .unwrap();
    assert_eq!(report.accuracies(), vec![1.0; 3]);
    assert_eq!((report.mean, report.std), (1.0, 0.0));
    assert!(report.aborted.is_none());

    assert!(matches!(
        evaluate_split(&w.pipeline, &[], &test, &StubBackend, &[], &EvalOptions::default()),
        Err(Error::Config(_))
    ));
}

#[test]
fn stub_evaluation_is_reproducible_and_order_invariant() {
    let spec = SyntheticSpec::default();
    let w = world(&spec, all_candidates(&spec));
    let train = w.data.split(Split::Train);
    let mut test = w.data.split(Split::Test);
    let opts = EvalOptions {
        retrain_probe: Some(fast_train()),
        ..EvalOptions::default()
    };
    let a = evaluate_split(&w.pipeline, &train, &test, &StubBackend, &[4, 5], &opts).unwrap();
    let b = evaluate_split(&w.pipeline, &train, &test, &StubBackend, &[4, 5], &opts).unwrap();
    assert_eq!(a, b);
    test.reverse();
    let c = evaluate_split(&w.pipeline, &train, &test, &StubBackend, &[5, 4], &opts).unwrap();
    let mut accs = c.accuracies();
    accs.reverse();
    assert_eq!(accs, a.accuracies());
    assert!((c.mean - a.mean).abs() < 1e-12);
    for s in &a.per_seed {
        assert!(s.correct <= s.total);
    }
}

struct Flaky;

impl Backend for Flaky {
    fn complete(&self, _: &CompletionRequest<'_>) -> Result<String, BackendError> {
        Err(BackendError::Transport {
            attempts: 3,
            message: "connection refused".into(),
        })
    }
}

struct Rambling;

impl Backend for Rambling {
    fn complete(&self, _: &CompletionRequest<'_>) -> Result<String, BackendError> {
        Ok("It could be many things.".into())
    }
}

#[test]
fn failures_abort_and_unparsed_replies_count_wrong() {
    let spec = SyntheticSpec::default();
    let w = world(&spec, all_candidates(&spec));
    let test = w.data.split(Split::Test);
    let report =
        evaluate_split(&w.pipeline, &[], &test, &Flaky, &[0, 1], &EvalOptions::default()).unwrap();
    assert!(report.aborted.is_some());
    assert!(report.per_seed.is_empty());

    let report =
        evaluate_split(&w.pipeline, &[], &test, &Rambling, &[0], &EvalOptions::default()).unwrap();
    assert_eq!(report.mean, 0.0);
    assert!(report.per_seed[0].records.iter().all(|r| !r.parse_ok && !r.correct));
}

#[test]
fn shipped_fixtures_validate() {
    let report = check_golden_fixtures(&fixture_dir()).unwrap();
    for r in &report.results {
        assert!(r.ok, "{}: {:?}", r.file, r.problems);
    }
    assert_eq!(report.results.len(), 27);

    let cub = load_curve(&fixture_dir().join("ratio/cub_chat-cbm.csv"), CurveSchema::Ratio).unwrap();
    let Curve::Ratio(points) = &cub else { panic!() };
    assert_eq!(points.first(), Some(&CurvePoint { x: 0.0, accuracy: 0.7978 }));
    assert_eq!(points.last(), Some(&CurvePoint { x: 1.0, accuracy: 0.9984 }));

    let dtd = load_curve(&fixture_dir().join("steps/dtd_v2c.csv"), CurveSchema::Steps).unwrap();
    assert_eq!(dtd, Curve::Steps(vec![0.734, 0.868, 0.926, 0.952, 0.965, 0.977]));
    assert_eq!(dtd.monotonicity(), Monotone::Strict);

    let pbc = load_curve(&fixture_dir().join("ratio/pbc_chat-cbm.csv"), CurveSchema::Ratio).unwrap();
    assert_eq!(pbc.monotonicity(), Monotone::None);
}

#[test]
fn corrupted_fixture_names_the_row() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("ratio")).unwrap();
    fs::write(
        dir.path().join("fixtures.json"),
        r#"{"fixtures":[{"file":"ratio/x.csv","schema":"ratio","monotone":"strict"}]}"#,
    )
    .unwrap();
    fs::write(
        dir.path().join("ratio/x.csv"),
        "ratio,accuracy\n0.0000,0.5000\n0.5000,1.7000\n",
    )
    .unwrap();
    match check_golden_fixtures(dir.path()) {
        Err(Error::Fixture { row, .. }) => assert_eq!(row, 3),
        other => panic!("{other:?}"),
    }

    fs::write(
        dir.path().join("ratio/x.csv"),
        "ratio,accuracy\n0.0000,0.9000\n0.5000,0.8000\n",
    )
    .unwrap();
    let report = check_golden_fixtures(dir.path()).unwrap();
    assert!(!report.ok());

    fs::write(dir.path().join("ratio/x.csv"), "ratio,accuracy\n0.0,0.9\n0.5,0.95\n").unwrap();
    let report = check_golden_fixtures(dir.path()).unwrap();
    assert!(report.results[0].problems[0].contains("re-emitted"));
}
