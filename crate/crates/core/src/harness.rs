//! Evaluation suites: plan and execute every task for a number of seeded
//! trials, then aggregate success rates and a failure histogram.
//!
//! Transcripts live under `<dir>/<task>/<icl|no_icl>/*.json`; each trial
//! replays one file chosen by a hash of (seed, task, trial).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::executor::{execute_action, mix_seed, ExecutorConfig, StepOutcome};
use crate::model::{ScriptedModel, Transcript, TranscriptError};
use crate::par::{self, Parallelism};
use crate::planner::{extract_relevant_objects, FailureKind, Planner, PlannerConfig};
use crate::rag_store::embed::token_hash;
use crate::rag_store::{
    augmentation_gate, embed, retrieve, GateError, GateOutcome, GateThresholds, PlanRecord,
    RecordStatus, RecordStore, Scorer, Verdict, Vote,
};
use crate::sim_world::task::FixtureError;
use crate::sim_world::{check_success, SimConfig, TaskSpec};
use crate::taxonomy::FailureCategory;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no transcripts for task {task:?} in {dir}")]
    MissingTranscript { task: String, dir: String },
    #[error("no fixture for task {task:?}: {source}")]
    MissingFixture { task: String, source: FixtureError },
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error("demonstration for {task:?} did not plan: {detail}")]
    DemoPlan { task: String, detail: String },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn mode_dir(icl: bool) -> &'static str {
    if icl {
        "icl"
    } else {
        "no_icl"
    }
}

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub tasks: Vec<String>,
    pub trials_per_task: usize,
    pub icl: bool,
    pub seed: u64,
    pub transcript_dir: PathBuf,
    /// Directory of `<task>.toml` fixtures; built-ins when absent.
    pub fixture_dir: Option<PathBuf>,
    pub top_k: usize,
    pub planner: PlannerConfig,
    pub executor: ExecutorConfig,
    pub parallelism: Parallelism,
    /// Write one JSON-lines episode log per trial here.
    pub log_dir: Option<PathBuf>,
}

impl SuiteConfig {
    pub fn new(transcript_dir: impl Into<PathBuf>, icl: bool) -> Self {
        Self {
            tasks: crate::sim_world::TASK_NAMES.iter().map(|s| s.to_string()).collect(),
            trials_per_task: 20,
            icl,
            seed: 0,
            transcript_dir: transcript_dir.into(),
            fixture_dir: None,
            top_k: 3,
            planner: PlannerConfig::default(),
            executor: ExecutorConfig::default(),
            parallelism: Parallelism::default(),
            log_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub task: String,
    pub trial: usize,
    pub icl: bool,
    pub success: bool,
    pub failure_category: Option<FailureCategory>,
    pub failure_detail: Option<String>,
    pub transcript: String,
    pub demo_id: Option<u64>,
    pub steps_planned: usize,
    pub steps_executed: usize,
    pub episode_log: Option<PathBuf>,
    /// Milliseconds; the only field that varies between identical runs.
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task: String,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub icl: bool,
    pub seed: u64,
    pub trials_per_task: usize,
    pub tasks: Vec<TaskRow>,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub failures: usize,
    pub failure_histogram: BTreeMap<FailureCategory, usize>,
    pub results: Vec<TrialResult>,
}

fn rate(successes: usize, trials: usize) -> f64 {
    if trials == 0 {
        0.0
    } else {
        successes as f64 / trials as f64
    }
}

impl SuiteReport {
    pub fn from_results(
        tasks: &[String],
        trials_per_task: usize,
        icl: bool,
        seed: u64,
        results: Vec<TrialResult>,
    ) -> Self {
        let rows = tasks
            .iter()
            .map(|t| {
                let mine: Vec<_> = results.iter().filter(|r| &r.task == t).collect();
                let successes = mine.iter().filter(|r| r.success).count();
                TaskRow {
                    task: t.clone(),
                    trials: mine.len(),
                    successes,
                    success_rate: rate(successes, mine.len()),
                }
            })
            .collect();
        let mut histogram: BTreeMap<FailureCategory, usize> =
            FailureCategory::ALL.iter().map(|c| (*c, 0)).collect();
        for r in &results {
            if let Some(c) = r.failure_category {
                *histogram.get_mut(&c).expect("all categories present") += 1;
            }
        }
        let successes = results.iter().filter(|r| r.success).count();
        SuiteReport {
            schema_version: REPORT_SCHEMA_VERSION,
            icl,
            seed,
            trials_per_task,
            tasks: rows,
            trials: results.len(),
            successes,
            success_rate: rate(successes, results.len()),
            failures: results.len() - successes,
            failure_histogram: histogram,
            results,
        }
    }

    /// The report with wall times zeroed, for byte comparisons.
    pub fn canonical(&self) -> SuiteReport {
        let mut r = self.clone();
        for t in &mut r.results {
            t.wall_time_ms = 0.0;
        }
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report encodes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "mode: {}  seed: {}", mode_dir(self.icl), self.seed);
        let _ = writeln!(out, "{:<14} {:>7} {:>9} {:>8}", "task", "trials", "success", "rate");
        for row in &self.tasks {
            let _ = writeln!(
                out,
                "{:<14} {:>7} {:>9} {:>7.1}%",
                row.task,
                row.trials,
                row.successes,
                row.success_rate * 100.0
            );
        }
        let _ = writeln!(
            out,
            "{:<14} {:>7} {:>9} {:>7.1}%",
            "total",
            self.trials,
            self.successes,
            self.success_rate * 100.0
        );
        let _ = writeln!(out, "failures: {}", self.failures);
        for (c, n) in &self.failure_histogram {
            let _ = writeln!(out, "  {:<38} {n}", c.label());
        }
        out
    }
}

struct TaskContext {
    spec: TaskSpec,
    transcripts: Vec<(String, Transcript)>,
}

fn load_fixture(config: &SuiteConfig, task: &str) -> Result<TaskSpec, HarnessError> {
    let loaded = match &config.fixture_dir {
        Some(dir) => TaskSpec::load(&dir.join(format!("{task}.toml")), SimConfig::default()),
        None => TaskSpec::builtin(task),
    };
    loaded.map_err(|source| HarnessError::MissingFixture {
        task: task.to_string(),
        source,
    })
}

/// All `*.json` transcripts for a task and mode, sorted by file name.
pub fn load_transcripts(
    dir: &Path,
    task: &str,
    icl: bool,
) -> Result<Vec<(String, Transcript)>, HarnessError> {
    let sub = dir.join(task).join(mode_dir(icl));
    let missing = || HarnessError::MissingTranscript {
        task: task.to_string(),
        dir: sub.display().to_string(),
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(&sub)
        .map_err(|_| missing())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(missing());
    }
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            Ok((name, Transcript::load(&p)?))
        })
        .collect()
}

pub fn trial_seed(seed: u64, task: &str, trial: usize) -> u64 {
    mix_seed(mix_seed(seed, token_hash(task)), trial as u64)
}

/// Categorize by the first failing tag; untagged failures count as `Other`.
fn categorize(kind: FailureKind) -> FailureCategory {
    match kind {
        FailureKind::Model => FailureCategory::Other,
        FailureKind::StageFormat | FailureKind::PlanParse | FailureKind::ChainValidation => {
            FailureCategory::ActionParsing
        }
    }
}

struct Episode {
    result: TrialResult,
    log: Vec<serde_json::Value>,
}

fn run_trial(
    config: &SuiteConfig,
    ctx: &TaskContext,
    db: Option<&RecordStore>,
    trial: usize,
) -> Episode {
    let started = Instant::now();
    let task = ctx.spec.name.clone();
    let seed = trial_seed(config.seed, &task, trial);
    let (transcript_name, transcript) = &ctx.transcripts[(seed % ctx.transcripts.len() as u64) as usize];
    let mut model = ScriptedModel::new(transcript.clone());
    let mut world = ctx.spec.instantiate(seed);
    let scene = world.scene_graph();
    let instruction = &ctx.spec.instruction;
    let templates = config.planner.templates;

    let mut log = vec![json!({
        "record": "trial", "task": task, "trial": trial, "icl": config.icl,
        "seed": seed, "transcript": transcript_name,
    })];
    let mut result = TrialResult {
        task: task.clone(),
        trial,
        icl: config.icl,
        success: false,
        failure_category: None,
        failure_detail: None,
        transcript: transcript_name.clone(),
        demo_id: None,
        steps_planned: 0,
        steps_executed: 0,
        episode_log: None,
        wall_time_ms: 0.0,
    };
    let fail = |result: &mut TrialResult, c: FailureCategory, detail: String| {
        result.failure_category = Some(c);
        result.failure_detail = Some(detail);
    };

    let mut demo = None;
    if let (true, Some(db)) = (config.icl, db) {
        let query = embed(instruction, &scene);
        match retrieve(db, &query, config.top_k.max(1), instruction, &scene, &mut model, &templates, Parallelism::Sequential) {
            Ok(Some(r)) => {
                result.demo_id = Some(r.record.id);
                log.push(json!({"record": "retrieval", "top_k": r.top_k, "selection": r.selection, "demo_id": r.record.id}));
                demo = Some(r.record.prompt_cache);
            }
            Ok(None) => log.push(json!({"record": "retrieval", "demo_id": null})),
            Err(e) => fail(&mut result, FailureCategory::Other, format!("retrieval: {e}")),
        }
    }

    if result.failure_category.is_none() {
        let planner = Planner::new(config.planner);
        match planner.plan_task(instruction, &scene, &mut model, demo.as_ref()) {
            Err(e) => fail(&mut result, FailureCategory::Other, e.to_string()),
            Ok(session) => {
                log.push(json!({
                    "record": "plan",
                    "plan": session.final_plan.as_ref().map(|p| p.lines()),
                    "failure": session.failure,
                }));
                match (&session.failure, &session.final_plan) {
                    (Some(f), _) => fail(&mut result, categorize(f.kind), format!("{}: {}", f.stage, f.message)),
                    (None, None) => fail(&mut result, FailureCategory::Other, "no plan".into()),
                    (None, Some(plan)) => {
                        result.steps_planned = plan.len();
                        let mut exec = config.executor;
                        exec.seed = seed;
                        for (i, action) in plan.actions.iter().enumerate() {
                            match execute_action(i, action, &mut world, &mut model, &exec, &templates) {
                                Ok(step) => {
                                    let failed = step.category.map(|c| (c, step.error.clone().unwrap_or_default()));
                                    log.push(step_record(&step));
                                    if let Some((c, detail)) = failed {
                                        fail(&mut result, c, format!("step {i}: {detail}"));
                                        break;
                                    }
                                    result.steps_executed += 1;
                                }
                                Err(e) => {
                                    fail(&mut result, FailureCategory::Other, format!("step {i}: {e}"));
                                    break;
                                }
                            }
                        }
                        if result.failure_category.is_none() {
                            result.success = check_success(&world, &ctx.spec.success);
                            if !result.success {
                                fail(
                                    &mut result,
                                    FailureCategory::TaskPlanning,
                                    "all steps executed but the goal is not met".into(),
                                );
                            }
                        }
                    }
                }
            }
        }
    }
    log.push(json!({
        "record": "result", "success": result.success,
        "category": result.failure_category, "detail": result.failure_detail,
    }));
    result.wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
    Episode { result, log }
}

fn step_record(step: &StepOutcome) -> serde_json::Value {
    let mut v = serde_json::to_value(step).expect("step encodes");
    v["record"] = json!("step");
    v
}

fn write_log(dir: &Path, ep: &mut Episode) -> Result<(), HarnessError> {
    let sub = dir.join(&ep.result.task);
    fs::create_dir_all(&sub).map_err(io_err(&sub))?;
    let path = sub.join(format!("{}-{:04}.jsonl", mode_dir(ep.result.icl), ep.result.trial));
    let mut f = fs::File::create(&path).map_err(io_err(&path))?;
    for line in &ep.log {
        writeln!(f, "{line}").map_err(io_err(&path))?;
    }
    ep.result.episode_log = Some(path);
    Ok(())
}

/// Run every task for `trials_per_task` seeded trials. Trials may run in
/// parallel; results are folded in (task, trial) order.
pub fn run_suite(config: &SuiteConfig, db: Option<&RecordStore>) -> Result<SuiteReport, HarnessError> {
    let contexts = config
        .tasks
        .iter()
        .map(|task| {
            Ok(TaskContext {
                spec: load_fixture(config, task)?,
                transcripts: load_transcripts(&config.transcript_dir, task, config.icl)?,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let jobs: Vec<(usize, usize)> = (0..contexts.len())
        .flat_map(|t| (0..config.trials_per_task).map(move |i| (t, i)))
        .collect();
    let episodes = par::map(&jobs, config.parallelism, |&(t, i)| run_trial(config, &contexts[t], db, i));
    let mut results = Vec::with_capacity(episodes.len());
    for mut ep in episodes {
        if let Some(dir) = &config.log_dir {
            write_log(dir, &mut ep)?;
        }
        results.push(ep.result);
    }
    Ok(SuiteReport::from_results(
        &config.tasks,
        config.trials_per_task,
        config.icl,
        config.seed,
        results,
    ))
}

#[derive(Debug, Error)]
#[error("suites are not comparable: {0}")]
pub struct MismatchedSuites(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub task: String,
    pub trials: usize,
    pub without_icl: f64,
    pub with_icl: f64,
    /// Percentage points.
    pub delta_points: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclComparison {
    pub schema_version: u32,
    pub rows: Vec<ComparisonRow>,
    pub overall: ComparisonRow,
}

fn row(task: &str, trials: usize, without: f64, with: f64) -> ComparisonRow {
    ComparisonRow {
        task: task.to_string(),
        trials,
        without_icl: without,
        with_icl: with,
        delta_points: (with - without) * 100.0,
    }
}

pub fn compare_icl(without: &SuiteReport, with: &SuiteReport) -> Result<IclComparison, MismatchedSuites> {
    let names = |r: &SuiteReport| r.tasks.iter().map(|t| t.task.clone()).collect::<Vec<_>>();
    if names(without) != names(with) {
        return Err(MismatchedSuites(format!(
            "task lists differ: {:?} vs {:?}",
            names(without),
            names(with)
        )));
    }
    if without.trials_per_task != with.trials_per_task {
        return Err(MismatchedSuites(format!(
            "trial counts differ: {} vs {}",
            without.trials_per_task, with.trials_per_task
        )));
    }
    let rows = without
        .tasks
        .iter()
        .zip(&with.tasks)
        .map(|(a, b)| row(&a.task, a.trials, a.success_rate, b.success_rate))
        .collect();
    Ok(IclComparison {
        schema_version: REPORT_SCHEMA_VERSION,
        rows,
        overall: row("overall", without.trials, without.success_rate, with.success_rate),
    })
}

impl IclComparison {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison encodes")
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<14} {:>7} {:>10} {:>10} {:>8}\n",
            "task", "trials", "no ICL", "ICL", "delta"
        );
        for r in self.rows.iter().chain(std::iter::once(&self.overall)) {
            let _ = writeln!(
                out,
                "{:<14} {:>7} {:>9.1}% {:>9.1}% {:>+8.1}",
                r.task,
                r.trials,
                r.without_icl * 100.0,
                r.with_icl * 100.0,
                r.delta_points
            );
        }
        out
    }
}

/// Plan each task once without a demonstration using its first ICL
/// transcript and commit the verified result through the gate.
pub fn build_demo_store(
    store: &mut RecordStore,
    transcript_dir: &Path,
    tasks: &[String],
    created_at: DateTime<Utc>,
    thresholds: &GateThresholds,
) -> Result<Vec<GateOutcome>, HarnessError> {
    let planner = Planner::default();
    let mut outcomes = Vec::new();
    for task in tasks {
        let spec = TaskSpec::builtin(task).map_err(|source| HarnessError::MissingFixture {
            task: task.clone(),
            source,
        })?;
        let (_, transcript) = load_transcripts(transcript_dir, task, true)?
            .into_iter()
            .next()
            .expect("load_transcripts never returns an empty list");
        let scene = spec.initial_world.scene_graph();
        let session = planner
            .plan_task(&spec.instruction, &scene, &mut ScriptedModel::new(transcript), None)
            .map_err(|e| HarnessError::DemoPlan {
                task: task.clone(),
                detail: e.to_string(),
            })?;
        let Some(plan) = session.final_plan.clone() else {
            return Err(HarnessError::DemoPlan {
                task: task.clone(),
                detail: format!("{:?}", session.failure),
            });
        };
        let record = PlanRecord {
            id: 0,
            instruction: spec.instruction.clone(),
            embedding: embed(&spec.instruction, &scene),
            relevant_objects: extract_relevant_objects(&session).unwrap_or_default(),
            prompt_cache: session.prompt_cache(created_at),
            scene,
            plan,
            status: RecordStatus::Verified,
            votes: vec![Vote {
                verdict: Verdict::Correct,
                annotator: "fixture".into(),
                timestamp: created_at,
            }],
        };
        outcomes.push(augmentation_gate(
            record,
            store,
            thresholds,
            &mut Scorer::Deterministic(Parallelism::Sequential),
        )?);
    }
    Ok(outcomes)
}
