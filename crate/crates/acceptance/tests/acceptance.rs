//! One check per acceptance criterion. Each prints a PASS/FAIL line with
//! its measured values and pinned tolerance; the process exits non-zero if
//! any criterion fails.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use chrono::{TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

use metaplan_acceptance::{first_break, jaccard, line_similarity, random_action, random_line, random_state};
use metaplan_annotate::{router, FixedClock, Service, TranscriptProvider};
use metaplan_core::executor::{sample_candidates, ExecutorConfig};
use metaplan_core::harness::{build_demo_store, run_suite, SuiteConfig, SuiteReport};
use metaplan_core::meta_action::{
    gripper_command, parse, serialize, validate_chain, GripperCommand, GripperState, LocationDescription,
    MetaAction, MotionKind, Plan, Preposition,
};
use metaplan_core::model::{Message, PromptCache};
use metaplan_core::par::Parallelism;
use metaplan_core::pose::Pose6D;
use metaplan_core::rag_store::{
    augmentation_gate, embed, object_similarity, rank, sequence_similarity, GateDecision, GateThresholds,
    PlanRecord, RecordStatus, RecordStore, Scorer,
};
use metaplan_core::scene::{Relation, SceneEdge, SceneGraph, SceneNode};
use metaplan_core::sim_world::TASK_NAMES;

type Outcome = Result<String, String>;

fn repo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn dsl_round_trip() -> Outcome {
    let budget = Duration::from_secs(5);
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1_000 {
        let a = random_action(&mut rng);
        let text = serialize(&a);
        let back = parse(&text).map_err(|e| format!("{text:?} failed to parse: {e}"))?;
        check(back == a, || format!("{text:?} round-tripped to {back:?}"))?;
    }
    let mut rejected = 0;
    for _ in 0..10_000 {
        let line = random_line(&mut rng);
        let outcome = std::panic::catch_unwind(|| parse(&line).is_err());
        match outcome {
            Ok(true) => rejected += 1,
            Ok(false) => {}
            Err(_) => return Err(format!("parser panicked on {line:?}")),
        }
    }
    let elapsed = started.elapsed();
    check(elapsed < budget, || format!("took {elapsed:?}, budget {budget:?}"))?;
    Ok(format!("1000 round trips, 10000 fuzz lines ({rejected} rejected), {:.2}s < 5s", elapsed.as_secs_f64()))
}

fn chain_validation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..500 {
        let len = rng.random_range(2..=12);
        // build a linked chain, then flip the `pre` of one or more actions
        let mut states = vec![(GripperState::Open, random_state(&mut rng))];
        for i in 1..len {
            let prev = states[i - 1].1;
            states.push((prev, random_state(&mut rng)));
        }
        let first = rng.random_range(1..len);
        states[first].0 = states[first].0.flip();
        for s in &mut states[first + 1..] {
            if rng.random_bool(0.3) {
                s.0 = s.0.flip();
            }
        }
        let expected = first_break(&states);
        check(expected == Some(first), || format!("generator bug in case {case}"))?;
        let actions: Vec<MetaAction> = states
            .iter()
            .map(|&(pre, post)| {
                MetaAction::new(pre, MotionKind::Move, LocationDescription::new(Preposition::Up, None), post)
            })
            .collect();
        let report = validate_chain(&Plan::new("t", actions), GripperState::Open).map_err(|e| e.to_string())?;
        let got = report.first_break.map(|b| b.index);
        check(got == Some(first), || format!("case {case}: injected at {first}, reported {got:?}"))?;
        check(report.initial_mismatch.is_none(), || format!("case {case}: spurious initial mismatch"))?;
    }
    Ok("500 plans, first injected index reported every time".into())
}

fn gripper_semantics() -> Outcome {
    use GripperState::*;
    let table = [
        (Open, Close, GripperCommand::CloseGripper),
        (Close, Open, GripperCommand::OpenGripper),
        (Open, Open, GripperCommand::Hold),
        (Close, Close, GripperCommand::Hold),
    ];
    for (pre, post, want) in table {
        let got = gripper_command(pre, post);
        check(got == want, || format!("({pre:?}, {post:?}) -> {got:?}, want {want:?}"))?;
    }
    Ok("4/4 (pre, post) pairs".into())
}

fn executor_geometry() -> Outcome {
    let cfg = ExecutorConfig::default();
    let alpha = cfg.alpha_max_deg.to_radians();
    let init = Pose6D::new(
        nalgebra::Vector3::new(0.42, -0.13, 0.21),
        nalgebra::UnitQuaternion::from_euler_angles(0.3, -0.2, 1.1),
    );
    let mut worst_r: f64 = 0.0;
    let mut worst_angle: f64 = 0.0;
    for (motion, seed) in [(MotionKind::Move, 11u64), (MotionKind::Rotate, 12)] {
        let set = sample_candidates(&init, motion, 10_000, seed, &cfg);
        let again = sample_candidates(&init, motion, 10_000, seed, &cfg);
        check(set == again, || format!("{motion:?}: same seed gave different sets"))?;
        check(set.candidates.len() == 10_000, || "wrong candidate count".into())?;
        for c in &set.candidates {
            match motion {
                MotionKind::Move => {
                    check(c.orientation == init.orientation, || "translation changed orientation".into())?;
                    worst_r = worst_r.max((c.position - init.position).norm());
                }
                MotionKind::Rotate => {
                    check(c.position == init.position, || "rotation changed position".into())?;
                    worst_angle = worst_angle.max(init.orientation.angle_to(&c.orientation));
                }
            }
        }
    }
    check(worst_r <= cfg.r_max + 1e-12, || format!("radius {worst_r} > {}", cfg.r_max))?;
    check(worst_angle <= alpha + 1e-9, || format!("angle {worst_angle} > {alpha}"))?;
    Ok(format!(
        "2x10000 candidates, max r {:.5} m <= 0.05, max angle {:.3} deg <= 30, pure modes, reproducible",
        worst_r,
        worst_angle.to_degrees()
    ))
}

fn line_plan(lines: &[&str]) -> Plan {
    Plan::new("t", lines.iter().map(|l| parse(l).unwrap()).collect())
}

fn similarity_oracle() -> Outcome {
    let universe = ["cup", "plate", "drawer", "pen", "bin"];
    let sets: Vec<BTreeSet<String>> = (0u32..32)
        .map(|mask| {
            (0..5)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| universe[i].to_string())
                .collect()
        })
        .collect();
    let alphabet = [
        "opened, move to, above, cup, opened",
        "opened, move to, on, cup, closed",
        "closed, move to, up, , closed",
        "closed, move to, into, bin, opened",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let plans: Vec<Plan> = (0..30)
        .map(|_| {
            let len = rng.random_range(1..=5);
            let lines: Vec<&str> = (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect();
            line_plan(&lines)
        })
        .collect();
    let mut pairs = 0;
    for a in &sets {
        for b in &sets {
            let (got, want) = (object_similarity(a, b), jaccard(a, b));
            check(got == want, || format!("objects {a:?} vs {b:?}: {got} != {want}"))?;
            pairs += 1;
        }
    }
    for a in &plans {
        for b in &plans {
            let (got, want) = (sequence_similarity(a, b), line_similarity(&a.lines(), &b.lines()));
            check(got == want, || format!("plans {:?} vs {:?}: {got} != {want}", a.lines(), b.lines()))?;
            pairs += 1;
        }
    }
    check(pairs >= 200, || format!("only {pairs} pairs"))?;
    Ok(format!("{pairs} pairs, exact equality"))
}

fn record(instruction: &str, lines: &[&str], objects: &[&str]) -> PlanRecord {
    let scene = SceneGraph::default();
    let text = lines.join("\n");
    PlanRecord {
        id: 0,
        instruction: instruction.into(),
        embedding: embed(instruction, &scene),
        scene,
        prompt_cache: PromptCache::new(
            vec![Message::system("s"), Message::user(instruction), Message::assistant(text.clone())],
            "scripted",
            chrono::DateTime::<Utc>::UNIX_EPOCH,
        )
        .unwrap(),
        plan: Plan::from_text("t", &text).unwrap(),
        relevant_objects: objects.iter().map(|s| s.to_string()).collect(),
        status: RecordStatus::Verified,
        votes: vec![],
    }
}

fn random_record(rng: &mut ChaCha8Rng) -> PlanRecord {
    const LINES: [&str; 6] = [
        "opened, move to, above, cup, opened",
        "opened, move to, above, pen, opened",
        "opened, move to, up, , opened",
        "opened, move to, left of, bin, opened",
        "opened, move to, down, , opened",
        "opened, move to, into, drawer, opened",
    ];
    const OBJECTS: [&str; 5] = ["cup", "pen", "bin", "drawer", "mug"];
    let lines: Vec<&str> = (0..rng.random_range(1..=5)).map(|_| LINES[rng.random_range(0..6)]).collect();
    let objects: Vec<&str> = OBJECTS.iter().copied().filter(|_| rng.random_bool(0.4)).collect();
    record("task", &lines, &objects)
}

fn gate(candidate: PlanRecord, store: &mut RecordStore) -> GateDecision {
    augmentation_gate(
        candidate,
        store,
        &GateThresholds::default(),
        &mut Scorer::Deterministic(Parallelism::Sequential),
    )
    .unwrap()
    .decision
}

fn augmentation_gate_rules() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    // novel on an empty store, then its duplicate
    for _ in 0..100 {
        let r = random_record(&mut rng);
        let mut store = RecordStore::in_memory();
        check(gate(r.clone(), &mut store) == GateDecision::Add, || "novel rejected on empty store".into())?;
        check(gate(r, &mut store) == GateDecision::Skip, || "duplicate admitted".into())?;
    }
    // permutation invariance
    for case in 0..100 {
        let existing: Vec<PlanRecord> = (0..rng.random_range(0..6)).map(|_| random_record(&mut rng)).collect();
        let candidate = random_record(&mut rng);
        let mut shuffled = existing.clone();
        shuffled.shuffle(&mut rng);
        let decide = |records: &[PlanRecord]| {
            let mut store = RecordStore::in_memory();
            for r in records {
                store.insert(r.clone()).unwrap();
            }
            gate(candidate.clone(), &mut store)
        };
        check(decide(&existing) == decide(&shuffled), || format!("case {case}: order changed the decision"))?;
    }
    // size is monotone and moves only on Add
    let mut adds = 0;
    for case in 0..100 {
        let mut store = RecordStore::in_memory();
        for _ in 0..rng.random_range(1..15) {
            let before = store.len();
            let d = gate(random_record(&mut rng), &mut store);
            let grew = store.len() - before;
            check(grew == usize::from(d == GateDecision::Add), || format!("sequence {case}: size moved by {grew} on {d:?}"))?;
            adds += grew;
        }
    }
    Ok(format!("100 dup/novel pairs, 100 permutations, 100 sequences ({adds} adds), all consistent"))
}

fn load_demos() -> RecordStore {
    let path = repo().join("data/demos.jsonl");
    RecordStore::from_jsonl("demos.jsonl", &std::fs::read_to_string(path).unwrap()).unwrap()
}

fn flawed_reports() -> (SuiteReport, SuiteReport, Duration) {
    let started = Instant::now();
    let db = load_demos();
    let without = run_suite(&SuiteConfig::new(repo().join("transcripts/flawed"), false), None).unwrap();
    let with = run_suite(&SuiteConfig::new(repo().join("transcripts/flawed"), true), Some(&db)).unwrap();
    (without, with, started.elapsed())
}

fn icl_effect(without: &SuiteReport, with: &SuiteReport, elapsed: Duration) -> Outcome {
    let budget = Duration::from_secs(120);
    check(without.trials == 80 && with.trials == 80, || "expected 4 tasks x 20 trials".into())?;
    check(with.success_rate > without.success_rate, || {
        format!("with ICL {:.1}% is not above without {:.1}%", with.success_rate * 100.0, without.success_rate * 100.0)
    })?;
    check(elapsed < budget, || format!("took {elapsed:?}, budget {budget:?}"))?;
    Ok(format!(
        "4x20 trials: with ICL {:.1}% > without {:.1}%, {:.2}s < 120s",
        with.success_rate * 100.0,
        without.success_rate * 100.0,
        elapsed.as_secs_f64()
    ))
}

fn taxonomy_partition(reports: &[&SuiteReport]) -> Outcome {
    let mut failed = 0;
    for report in reports {
        for r in &report.results {
            check(r.success == r.failure_category.is_none(), || {
                format!("{} #{}: success={} category={:?}", r.task, r.trial, r.success, r.failure_category)
            })?;
        }
        let total: usize = report.failure_histogram.values().sum();
        let failures = report.results.iter().filter(|r| !r.success).count();
        check(total == report.failures && failures == report.failures, || {
            format!("histogram {total} vs failures {} vs results {failures}", report.failures)
        })?;
        failed += failures;
    }
    Ok(format!("{} suites, {failed} failed trials, each in exactly one category", reports.len()))
}

fn fixture_scene(i: usize) -> SceneGraph {
    let names = ["cup", "plate", "drawer", "pen", "bin", "mug", "box"];
    let a = names[i % names.len()];
    let b = names[(i * 3 + 1) % names.len()];
    SceneGraph {
        nodes: vec![
            SceneNode { name: a.into(), category: a.into(), pose: Pose6D::from_xyz(0.1 * i as f64, 0.0, 0.0) },
            SceneNode { name: b.into(), category: b.into(), pose: Pose6D::from_xyz(0.0, 0.1, 0.0) },
        ],
        edges: vec![SceneEdge {
            subject: a.into(),
            relation: if i.is_multiple_of(2) { Relation::On } else { Relation::In },
            object: b.into(),
        }],
    }
}

fn persistence_fidelity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("db.jsonl");
    let verbs = ["put", "move", "place", "stack", "hide"];
    let mut store = RecordStore::open(&path).map_err(|e| e.to_string())?;
    for i in 0..20 {
        let scene = fixture_scene(i);
        let instruction = format!("{} the {} near the {}", verbs[i % 5], scene.nodes[0].name, scene.nodes[1].name);
        let mut r = record(&instruction, &["opened, move to, up, , opened"], &[]);
        r.embedding = embed(&instruction, &scene);
        r.scene = scene;
        store.insert(r).map_err(|e| e.to_string())?;
    }
    let reloaded = RecordStore::open(&path).map_err(|e| e.to_string())?;
    for q in 0..20 {
        let scene = fixture_scene(q + 3);
        let query = embed(&format!("{} something", verbs[q % 5]), &scene);
        let ids = |s: &RecordStore| {
            rank(s, &query, Parallelism::Sequential)
                .iter()
                .map(|r| r.id.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let (a, b) = (ids(&store), ids(&reloaded));
        check(a.as_bytes() == b.as_bytes(), || format!("query {q}: {a} vs {b}"))?;
    }
    Ok("20 records, 20 queries, ranked id lists byte-identical after reload".into())
}

async fn send(app: &axum::Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or(Body::empty(), |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
}

fn session() -> Vec<(Method, String, Option<Value>)> {
    let mut out = Vec::new();
    let post = |uri: String, body: Option<Value>| (Method::POST, uri, body);
    for (i, task) in TASK_NAMES.iter().enumerate() {
        let id = i + 1;
        out.push(post("/tasks".into(), Some(json!({"instruction": format!("Complete the {task} task"), "scene_ref": task}))));
        out.push(post(format!("/tasks/{id}/vote"), Some(json!({"verdict": "correct", "annotator": "ann"}))));
        out.push(post(format!("/tasks/{id}/plan"), Some(json!({"mode": "both"}))));
        out.push(post(format!("/tasks/{id}/vote"), Some(json!({"verdict": "incorrect", "annotator": "bo"}))));
        out.push(post(format!("/tasks/{id}/commit"), None));
        out.push(post(format!("/tasks/{id}/vote"), Some(json!({"verdict": "correct", "annotator": "ann"}))));
        out.push(post(format!("/tasks/{id}/commit"), None));
    }
    out.push((Method::GET, "/records".into(), None));
    out.push((Method::GET, "/tasks".into(), None));
    assert_eq!(out.len(), 30);
    out
}

async fn replay(db: &Path) -> Vec<(StatusCode, Vec<u8>)> {
    let service = Service::new(
        RecordStore::open(db).unwrap(),
        Arc::new(FixedClock(Utc.with_ymd_and_hms(2025, 2, 1, 9, 0, 0).unwrap())),
        Arc::new(TranscriptProvider { dir: repo().join("transcripts/good") }),
    );
    let app = router(service);
    let mut responses = Vec::new();
    for (method, uri, body) in session() {
        responses.push(send(&app, method, &uri, body).await);
    }
    responses
}

async fn api_replay() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ra = replay(&a.path().join("db.jsonl")).await;
    let rb = replay(&b.path().join("db.jsonl")).await;
    check(ra == rb, || "responses differ between replays".into())?;
    let fa = std::fs::read(a.path().join("db.jsonl")).map_err(|e| e.to_string())?;
    let fb = std::fs::read(b.path().join("db.jsonl")).map_err(|e| e.to_string())?;
    check(fa == fb, || "database files differ".into())?;
    let store = RecordStore::open(a.path().join("db.jsonl")).map_err(|e| e.to_string())?;
    check(store.to_jsonl().map_err(|e| e.to_string())?.as_bytes() == fa.as_slice(), || {
        "file is not the fold of its operations".into()
    })?;
    let errors = ra.iter().filter(|(s, _)| !s.is_success()).count();
    check(!store.is_empty(), || "session committed nothing".into())?;
    Ok(format!(
        "30 requests ({errors} refused by design), {} records, {} byte DB identical across fresh servers",
        store.len(),
        fa.len()
    ))
}

fn report(name: &str, outcome: &Outcome) -> bool {
    match outcome {
        Ok(detail) => println!("PASS  {name:<28} {detail}"),
        Err(detail) => println!("FAIL  {name:<28} {detail}"),
    }
    outcome.is_ok()
}

fn shipped_demos() -> Outcome {
    let mut store = RecordStore::in_memory();
    let at = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
    let tasks: Vec<String> = TASK_NAMES.iter().map(|t| t.to_string()).collect();
    build_demo_store(&mut store, &repo().join("transcripts/good"), &tasks, at, &GateThresholds::default())
        .map_err(|e| e.to_string())?;
    let fresh = store.to_jsonl().map_err(|e| e.to_string())?;
    check(fresh == load_demos().to_jsonl().map_err(|e| e.to_string())?, || {
        "data/demos.jsonl is stale".into()
    })?;
    Ok(format!("{} records regenerate byte-for-byte", store.len()))
}

fn main() -> std::process::ExitCode {
    let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
    let (without, with, elapsed) = flawed_reports();
    let good = run_suite(&SuiteConfig::new(repo().join("transcripts/good"), true), Some(&load_demos())).unwrap();
    let results = [
        ("dsl_round_trip", dsl_round_trip()),
        ("chain_validation", chain_validation()),
        ("gripper_semantics", gripper_semantics()),
        ("executor_geometry", executor_geometry()),
        ("similarity_oracle", similarity_oracle()),
        ("augmentation_gate", augmentation_gate_rules()),
        ("icl_directional_effect", icl_effect(&without, &with, elapsed)),
        ("failure_taxonomy_partition", taxonomy_partition(&[&without, &with, &good])),
        ("persistence_fidelity", persistence_fidelity()),
        ("api_replay_equivalence", rt.block_on(api_replay())),
        ("shipped_demo_database", shipped_demos()),
    ];
    let passed = results.iter().filter(|(n, o)| report(n, o)).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed == results.len() {
        std::process::ExitCode::SUCCESS
    } else {
        std::process::ExitCode::FAILURE
    }
}
