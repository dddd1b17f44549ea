use std::path::PathBuf;

use chrono::{TimeZone, Utc};
use metaplan_core::harness::{build_demo_store, compare_icl, run_suite, HarnessError, SuiteConfig};
use metaplan_core::par::Parallelism;
use metaplan_core::rag_store::{GateDecision, GateThresholds, RecordStore};
use metaplan_core::taxonomy::FailureCategory;
use metaplan_core::sim_world::TASK_NAMES;

fn repo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn corpus(set: &str) -> PathBuf {
    repo().join("transcripts").join(set)
}

fn all_tasks() -> Vec<String> {
    TASK_NAMES.iter().map(|t| t.to_string()).collect()
}

fn fresh_demos() -> RecordStore {
    let mut store = RecordStore::in_memory();
    let at = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
    build_demo_store(&mut store, &corpus("good"), &all_tasks(), at, &GateThresholds::default()).unwrap();
    store
}

#[test]
fn good_transcripts_solve_every_task() {
    let db = fresh_demos();
    for icl in [false, true] {
        let mut cfg = SuiteConfig::new(corpus("good"), icl);
        cfg.trials_per_task = 5;
        let report = run_suite(&cfg, icl.then_some(&db)).unwrap();
        for r in report.results.iter().filter(|r| !r.success) {
            eprintln!("{} #{} {:?} {:?}", r.task, r.trial, r.failure_category, r.failure_detail);
        }
        assert_eq!(report.successes, 20, "icl={icl}");
        assert_eq!(report.failures, 0);
    }
}

#[test]
fn flawed_corpus_icl_beats_no_icl() {
    let db = fresh_demos();
    let mut reports = Vec::new();
    for icl in [false, true] {
        let cfg = SuiteConfig::new(corpus("flawed"), icl);
        let report = run_suite(&cfg, icl.then_some(&db)).unwrap();
        eprintln!("{}", report.to_text());
        reports.push(report);
    }
    let cmp = compare_icl(&reports[0], &reports[1]).unwrap();
    eprintln!("{}", cmp.to_text());
    assert!(reports[1].success_rate > reports[0].success_rate);
}

/// The shipped demo database is exactly what the good corpus produces.
/// Set `UPDATE_DEMOS=1` to rewrite it.
#[test]
fn shipped_demo_database_regenerates_byte_for_byte() {
    let path = repo().join("data/demos.jsonl");
    let fresh = fresh_demos().to_jsonl().unwrap();
    if std::env::var_os("UPDATE_DEMOS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &fresh).unwrap();
    }
    let shipped = std::fs::read_to_string(&path).unwrap();
    assert_eq!(shipped, fresh);
    let loaded = RecordStore::from_jsonl("demos.jsonl", &shipped).unwrap();
    assert_eq!(loaded.len(), TASK_NAMES.len());
    assert_eq!(loaded.to_jsonl().unwrap(), shipped);
}

#[test]
fn demo_gate_admits_each_task_once() {
    let mut store = RecordStore::in_memory();
    let at = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
    let first = build_demo_store(&mut store, &corpus("good"), &all_tasks(), at, &GateThresholds::default()).unwrap();
    assert!(first.iter().all(|o| o.decision == GateDecision::Add));
    let again = build_demo_store(&mut store, &corpus("good"), &all_tasks(), at, &GateThresholds::default()).unwrap();
    assert!(again.iter().all(|o| o.decision == GateDecision::Skip));
    assert_eq!(store.len(), TASK_NAMES.len());
}

#[test]
fn parallel_and_sequential_reports_match() {
    let db = fresh_demos();
    for icl in [false, true] {
        let mut seq = SuiteConfig::new(corpus("flawed"), icl);
        seq.trials_per_task = 8;
        seq.seed = 7;
        seq.parallelism = Parallelism::Sequential;
        let mut par = seq.clone();
        par.parallelism = Parallelism::Parallel;
        let a = run_suite(&seq, icl.then_some(&db)).unwrap().canonical();
        let b = run_suite(&par, icl.then_some(&db)).unwrap().canonical();
        assert_eq!(a.to_json(), b.to_json());
    }
}

#[test]
fn zero_trials_gives_empty_report() {
    let mut cfg = SuiteConfig::new(corpus("good"), false);
    cfg.trials_per_task = 0;
    let report = run_suite(&cfg, None).unwrap();
    assert_eq!(report.trials, 0);
    assert_eq!(report.success_rate, 0.0);
    assert!(report.results.is_empty());
    assert_eq!(report.failure_histogram.len(), FailureCategory::ALL.len());
    assert!(report.failure_histogram.values().all(|&n| n == 0));
}

#[test]
fn missing_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SuiteConfig::new(dir.path(), false);
    assert!(matches!(run_suite(&cfg, None), Err(HarnessError::MissingTranscript { .. })));

    let mut cfg = SuiteConfig::new(corpus("good"), false);
    cfg.tasks = vec!["fold_laundry".into()];
    assert!(matches!(run_suite(&cfg, None), Err(HarnessError::MissingFixture { .. })));
}

#[test]
fn episode_logs_written_per_trial() {
    let logs = tempfile::tempdir().unwrap();
    let mut cfg = SuiteConfig::new(corpus("good"), false);
    cfg.tasks = vec!["open_drawer".into()];
    cfg.trials_per_task = 2;
    cfg.log_dir = Some(logs.path().to_path_buf());
    let report = run_suite(&cfg, None).unwrap();
    for r in &report.results {
        let path = r.episode_log.as_ref().unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let kinds: Vec<String> = text
            .lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["record"].as_str().unwrap().to_string())
            .collect();
        assert_eq!(kinds.first().map(String::as_str), Some("trial"));
        assert_eq!(kinds.last().map(String::as_str), Some("result"));
        assert_eq!(kinds.iter().filter(|k| *k == "step").count(), r.steps_executed);
    }
}
