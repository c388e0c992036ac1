mod common;

use texhand::{synthetic_rating, OracleKind, OracleStrategy, SimulateError, Simulation};
use texhand_core::{
    build_embedding_store, plan_assignments, replay_file, Assignment, AssignmentPlan, Catalog, EmbeddingStore,
    MockBackend, SessionConfig, SessionLog, TextileId, Vector,
};

fn bundled() -> (Catalog, EmbeddingStore, MockBackend) {
    let catalog = Catalog::bundled();
    let backend = MockBackend::new(64);
    let store = build_embedding_store(&catalog, &backend).unwrap();
    (catalog, store, backend)
}

fn ended_lines(path: &std::path::Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|e| e["event"] == "session_end")
        .collect()
}

#[test]
fn verbatim_run_is_deterministic_and_replays() {
    let (catalog, store, backend) = bundled();
    let plan = plan_assignments(&catalog, 42).unwrap();
    let sim = Simulation { catalog: &catalog, store: &store, backend: &backend, config: SessionConfig::default() };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sim.jsonl");
    let log = SessionLog::open(&path).unwrap();
    let run = sim.run(&plan, &OracleStrategy::verbatim(), &log).unwrap();
    let again = sim.run(&plan, &OracleStrategy::verbatim(), &SessionLog::discard()).unwrap();

    assert_eq!(run, again);
    assert!(run.failures.is_empty());
    assert_eq!(run.records.len(), 80);
    assert!(run.records.iter().all(|r| (1..=5).contains(&r.attempts.len())));
    assert_eq!(run.records[0].session_id, "sim-42-1");
    assert_eq!(ended_lines(&path).len(), 80);

    let replayed = replay_file(&path).unwrap();
    assert!(replayed.synthetic);
    assert_eq!(replayed.records, run.records);
}

#[test]
fn wrong_guesses_carry_synthetic_ratings() {
    let (catalog, store, backend) = bundled();
    let plan = plan_assignments(&catalog, 3).unwrap();
    let sim = Simulation { catalog: &catalog, store: &store, backend: &backend, config: SessionConfig::default() };
    let strategy = OracleStrategy::new(OracleKind::Truncate, 0.3, 0).unwrap();
    let run = sim.run(&plan, &strategy, &SessionLog::discard()).unwrap();
    let record = run.records.iter().find(|r| r.attempts.iter().any(|a| !a.correct)).expect("some wrong guess");
    for a in record.attempts.iter().filter(|a| !a.correct) {
        let expected = synthetic_rating(&store, a.predicted_id, record.target_id);
        assert_eq!(a.validity, expected);
        assert_eq!(a.similarity, expected);
    }
}

#[test]
fn dropping_every_word_fails_each_task_and_keeps_going() {
    let (catalog, store, backend) = bundled();
    let plan = plan_assignments(&catalog, 42).unwrap();
    let sim = Simulation { catalog: &catalog, store: &store, backend: &backend, config: SessionConfig::default() };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sim.jsonl");
    let strategy = OracleStrategy::new(OracleKind::TokenDropout, 1.0, 5).unwrap();
    let run = sim.run(&plan, &strategy, &SessionLog::open(&path).unwrap()).unwrap();

    assert!(run.records.is_empty());
    assert_eq!(run.failures.len(), 80);
    let ends = ended_lines(&path);
    assert_eq!(ends.len(), 80);
    assert!(ends.iter().all(|e| e["outcome"] == "error" && e["error"].is_string()));
    assert_eq!(replay_file(&path).unwrap().errored.len(), 80);
}

#[test]
fn small_catalog_plays_every_ordered_pair() {
    let catalog = common::disjoint_catalog();
    let backend = MockBackend::new(128);
    let store = build_embedding_store(&catalog, &backend).unwrap();
    let pairs = vec![
        Assignment::new(TextileId(1), TextileId(2)).unwrap(),
        Assignment::new(TextileId(3), TextileId(1)).unwrap(),
    ];
    let sim = Simulation { catalog: &catalog, store: &store, backend: &backend, config: SessionConfig::default() };
    let run = sim.run(&AssignmentPlan { seed: 0, pairs }, &OracleStrategy::verbatim(), &SessionLog::discard()).unwrap();
    assert!(run.records.iter().all(|r| r.won() && r.attempts.len() == 1));
}

#[test]
fn bad_plans_are_rejected_up_front() {
    let (catalog, store, backend) = bundled();
    let sim = Simulation { catalog: &catalog, store: &store, backend: &backend, config: SessionConfig::default() };
    let self_pair = AssignmentPlan {
        seed: 0,
        pairs: vec![Assignment { target_id: TextileId(4), reference_id: TextileId(4) }],
    };
    let err = sim.run(&self_pair, &OracleStrategy::verbatim(), &SessionLog::discard()).unwrap_err();
    assert!(matches!(err, SimulateError::Plan { index: 0, .. }));

    let unknown = AssignmentPlan {
        seed: 0,
        pairs: vec![
            Assignment::new(TextileId(1), TextileId(2)).unwrap(),
            Assignment::new(TextileId(77), TextileId(2)).unwrap(),
        ],
    };
    let err = sim.run(&unknown, &OracleStrategy::verbatim(), &SessionLog::discard()).unwrap_err();
    assert!(matches!(err, SimulateError::Plan { index: 1, .. }));
}

#[test]
fn strategy_params_are_checked() {
    assert!(OracleStrategy::new(OracleKind::Truncate, 1.5, 0).is_err());
    assert!(OracleStrategy::new(OracleKind::Truncate, -0.1, 0).is_err());
    assert!(OracleStrategy::new(OracleKind::TokenDropout, f64::NAN, 0).is_err());
    assert!("token-dropout".parse::<OracleKind>().is_ok());
    assert!("shuffle".parse::<OracleKind>().is_err());
    assert_eq!(OracleKind::TokenDropout.to_string(), "token_dropout");
}

#[test]
fn truncate_keeps_a_rounded_up_prefix() {
    let s = OracleStrategy::new(OracleKind::Truncate, 0.5, 0).unwrap();
    assert_eq!(s.describe("a b c", 0, 1), "a b");
    assert_eq!(s.describe("a b c d", 0, 1), "a b");
    let all = OracleStrategy::new(OracleKind::Truncate, 1.0, 0).unwrap();
    assert_eq!(all.describe("a  b c", 0, 1), "a b c");
    let none = OracleStrategy::new(OracleKind::Truncate, 0.0, 0).unwrap();
    assert_eq!(none.describe("a b c", 0, 1), "");
}

#[test]
fn token_dropout_is_seeded_per_task_and_attempt() {
    let text = (0..60).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
    let s = OracleStrategy::new(OracleKind::TokenDropout, 0.5, 11).unwrap();
    assert_eq!(s.describe(&text, 3, 2), s.describe(&text, 3, 2));
    assert_ne!(s.describe(&text, 3, 2), s.describe(&text, 3, 3));
    assert_ne!(s.describe(&text, 3, 2), s.describe(&text, 4, 2));
    let kept = s.describe(&text, 0, 1).split_whitespace().count();
    assert!((15..=45).contains(&kept), "kept {kept} of 60");
    let keep_all = OracleStrategy::new(OracleKind::TokenDropout, 0.0, 11).unwrap();
    assert_eq!(keep_all.describe(&text, 0, 1), text);
}

#[test]
fn synthetic_rating_spans_the_scale() {
    let store = EmbeddingStore::from_vectors(
        "test",
        "t",
        [
            (TextileId(1), Vector::new(vec![1.0, 0.0]).unwrap()),
            (TextileId(2), Vector::new(vec![-1.0, 0.0]).unwrap()),
            (TextileId(3), Vector::new(vec![0.0, 1.0]).unwrap()),
        ],
    )
    .unwrap();
    assert_eq!(synthetic_rating(&store, TextileId(1), TextileId(1)), Some(10));
    assert_eq!(synthetic_rating(&store, TextileId(2), TextileId(1)), Some(1));
    assert_eq!(synthetic_rating(&store, TextileId(3), TextileId(1)), Some(6));
    assert_eq!(synthetic_rating(&store, TextileId(9), TextileId(1)), None);
}
