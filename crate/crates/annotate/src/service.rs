//! Annotation workflow state, independent of the HTTP layer.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use metaplan_core::harness::load_transcripts;
use metaplan_core::model::{ConversationModel, ModelError, ScriptedModel};
use metaplan_core::par::Parallelism;
use metaplan_core::planner::{extract_relevant_objects, EditError, Planner, PlanningSession};
use metaplan_core::rag_store::{
    augmentation_gate, embed, retrieve, GateError, GateOutcome, GateThresholds, PlanRecord,
    RecordStatus, RecordStore, Scorer, Selection, StoreError, Verdict, Vote,
};
use metaplan_core::scene::SceneGraph;
use metaplan_core::sim_world::task::FixtureError;
use metaplan_core::sim_world::{SimConfig, TaskSpec};

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Always returns the same instant.
pub struct FixedClock(pub DateTime<Utc>);

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    Icl,
    NoIcl,
    Both,
}

/// One of the two sessions a task can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionSlot {
    Icl,
    NoIcl,
}

/// Hands out a conversation model for each planning request.
pub trait ModelProvider: Send + Sync {
    fn model(&self, scene_ref: &str, slot: SessionSlot) -> Result<Box<dyn ConversationModel>, ModelError>;
}

/// Replays the first transcript under `<dir>/<scene_ref>/<icl|no_icl>/`.
pub struct TranscriptProvider {
    pub dir: PathBuf,
}

impl ModelProvider for TranscriptProvider {
    fn model(&self, scene_ref: &str, slot: SessionSlot) -> Result<Box<dyn ConversationModel>, ModelError> {
        let (_, transcript) = load_transcripts(&self.dir, scene_ref, slot == SessionSlot::Icl)
            .map_err(|e| ModelError::Transport(e.to_string()))?
            .into_iter()
            .next()
            .expect("load_transcripts never returns an empty list");
        Ok(Box::new(ScriptedModel::new(transcript)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session: PlanningSession,
    /// Id of the demonstration replayed before planning.
    pub demo_id: Option<u64>,
    pub selection: Option<Selection>,
    /// Set when ICL was requested but the store had nothing to offer.
    pub note: Option<String>,
    pub stale_stages: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Sessions {
    pub with_icl: Option<SessionView>,
    pub without_icl: Option<SessionView>,
}

impl Sessions {
    fn get(&self, slot: SessionSlot) -> Option<&SessionView> {
        match slot {
            SessionSlot::Icl => self.with_icl.as_ref(),
            SessionSlot::NoIcl => self.without_icl.as_ref(),
        }
    }

    fn get_mut(&mut self, slot: SessionSlot) -> Option<&mut SessionView> {
        match slot {
            SessionSlot::Icl => self.with_icl.as_mut(),
            SessionSlot::NoIcl => self.without_icl.as_mut(),
        }
    }

    fn set(&mut self, slot: SessionSlot, view: SessionView) {
        match slot {
            SessionSlot::Icl => self.with_icl = Some(view),
            SessionSlot::NoIcl => self.without_icl = Some(view),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub id: u64,
    pub instruction: String,
    pub scene_ref: String,
    pub status: RecordStatus,
    pub sessions: Sessions,
    /// Session the votes refer to.
    pub voted_session: Option<SessionSlot>,
    pub votes: Vec<Vote>,
    pub record_id: Option<u64>,
    pub gate: Option<GateOutcome>,
    pub committed: bool,
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown scene {0:?}")]
    UnknownScene(String),
    #[error("unknown task {0}")]
    UnknownTask(u64),
    #[error("unknown record {0}")]
    UnknownRecord(u64),
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("task {task} has no {slot:?} session")]
    NoSession { task: u64, slot: SessionSlot },
    #[error("session version is {current}, edit was based on {given}")]
    StaleVersion { current: u64, given: u64 },
    #[error(transparent)]
    Edit(#[from] EditError),
    #[error("task {0} has no final plan to vote on")]
    NoFinalPlan(u64),
    #[error("task status is {0:?}, only verified tasks can be committed")]
    NotVerified(RecordStatus),
    #[error("task {0} is already committed")]
    AlreadyCommitted(u64),
    #[error("model: {0}")]
    Model(String),
    #[error(transparent)]
    Gate(GateError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("writing {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    /// Matching votes needed to settle a task.
    pub quorum: usize,
    pub top_k: usize,
    pub thresholds: GateThresholds,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            quorum: 1,
            top_k: 3,
            thresholds: GateThresholds::default(),
        }
    }
}

pub struct Service {
    store: RecordStore,
    tasks: Vec<AnnotationTask>,
    planner: Planner,
    config: ServiceConfig,
    clock: Arc<dyn Clock>,
    models: Arc<dyn ModelProvider>,
    fixture_dir: Option<PathBuf>,
    /// Where the task table is mirrored after each change.
    task_file: Option<PathBuf>,
}

pub const NO_DEMONSTRATION: &str = "no demonstration available";

impl Service {
    pub fn new(store: RecordStore, clock: Arc<dyn Clock>, models: Arc<dyn ModelProvider>) -> Self {
        Self {
            store,
            tasks: Vec::new(),
            planner: Planner::default(),
            config: ServiceConfig::default(),
            clock,
            models,
            fixture_dir: None,
            task_file: None,
        }
    }

    pub fn with_config(mut self, config: ServiceConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_fixture_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.fixture_dir = Some(dir.into());
        self
    }

    /// Mirror the task table to `path`, loading it first if it exists.
    pub fn with_task_file(mut self, path: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let path = path.into();
        if let Ok(text) = fs::read_to_string(&path) {
            self.tasks = serde_json::from_str(&text).map_err(|e| ServiceError::Io {
                path: path.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
            })?;
        }
        self.task_file = Some(path);
        Ok(self)
    }

    pub fn store(&self) -> &RecordStore {
        &self.store
    }

    pub fn tasks(&self) -> &[AnnotationTask] {
        &self.tasks
    }

    pub fn task(&self, id: u64) -> Result<&AnnotationTask, ServiceError> {
        self.tasks
            .iter()
            .find(|t| t.id == id)
            .ok_or(ServiceError::UnknownTask(id))
    }

    fn task_mut(&mut self, id: u64) -> Result<&mut AnnotationTask, ServiceError> {
        self.tasks
            .iter_mut()
            .find(|t| t.id == id)
            .ok_or(ServiceError::UnknownTask(id))
    }

    pub fn record(&self, id: u64) -> Result<&PlanRecord, ServiceError> {
        self.store.get(id).ok_or(ServiceError::UnknownRecord(id))
    }

    fn scene(&self, scene_ref: &str) -> Result<SceneGraph, ServiceError> {
        let spec = match &self.fixture_dir {
            Some(dir) => TaskSpec::load(&dir.join(format!("{scene_ref}.toml")), SimConfig::default()),
            None => TaskSpec::builtin(scene_ref),
        };
        match spec {
            Ok(spec) => Ok(spec.initial_world.scene_graph()),
            Err(FixtureError::Missing(_) | FixtureError::Io { .. }) => {
                Err(ServiceError::UnknownScene(scene_ref.to_string()))
            }
            Err(e) => Err(ServiceError::UnknownScene(format!("{scene_ref}: {e}"))),
        }
    }

    fn save_tasks(&self) -> Result<(), ServiceError> {
        let Some(path) = &self.task_file else {
            return Ok(());
        };
        let io = |source| ServiceError::Io {
            path: path.display().to_string(),
            source,
        };
        let tmp = path.with_extension("tmp");
        let text = serde_json::to_string_pretty(&self.tasks).expect("tasks encode");
        fs::write(&tmp, text).map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn create_task(&mut self, instruction: &str, scene_ref: &str) -> Result<&AnnotationTask, ServiceError> {
        if instruction.trim().is_empty() {
            return Err(ServiceError::EmptyInstruction);
        }
        self.scene(scene_ref)?;
        let id = self.tasks.last().map_or(1, |t| t.id + 1);
        self.tasks.push(AnnotationTask {
            id,
            instruction: instruction.to_string(),
            scene_ref: scene_ref.to_string(),
            status: RecordStatus::Pending,
            sessions: Sessions::default(),
            voted_session: None,
            votes: Vec::new(),
            record_id: None,
            gate: None,
            committed: false,
        });
        self.save_tasks()?;
        self.task(id)
    }

    fn plan_one(&self, task: &AnnotationTask, scene: &SceneGraph, slot: SessionSlot) -> Result<SessionView, ServiceError> {
        let mut model = self
            .models
            .model(&task.scene_ref, slot)
            .map_err(|e| ServiceError::Model(e.to_string()))?;
        let mut demo_id = None;
        let mut selection = None;
        let mut note = None;
        let mut demo = None;
        if slot == SessionSlot::Icl {
            let query = embed(&task.instruction, scene);
            let found = retrieve(
                &self.store,
                &query,
                self.config.top_k.max(1),
                &task.instruction,
                scene,
                model.as_mut(),
                &self.planner.config().templates,
                Parallelism::Sequential,
            )
            .map_err(|e| ServiceError::Model(format!("demonstration selection: {e}")))?;
            match found {
                Some(r) => {
                    demo_id = Some(r.record.id);
                    selection = Some(r.selection);
                    demo = Some(r.record.prompt_cache);
                }
                None => note = Some(NO_DEMONSTRATION.to_string()),
            }
        }
        let session = self
            .planner
            .plan_task(&task.instruction, scene, model.as_mut(), demo.as_ref())
            .map_err(|_| ServiceError::EmptyInstruction)?;
        Ok(SessionView {
            stale_stages: session.stale_stages(),
            session,
            demo_id,
            selection,
            note,
        })
    }

    /// Run the planner in the requested mode(s); replaces earlier sessions
    /// and clears any votes.
    pub fn plan(&mut self, id: u64, mode: PlanMode) -> Result<&AnnotationTask, ServiceError> {
        let task = self.task(id)?.clone();
        if task.committed {
            return Err(ServiceError::AlreadyCommitted(id));
        }
        let scene = self.scene(&task.scene_ref)?;
        let slots: &[SessionSlot] = match mode {
            PlanMode::Icl => &[SessionSlot::Icl],
            PlanMode::NoIcl => &[SessionSlot::NoIcl],
            PlanMode::Both => &[SessionSlot::NoIcl, SessionSlot::Icl],
        };
        let mut views = Vec::new();
        for &slot in slots {
            views.push((slot, self.plan_one(&task, &scene, slot)?));
        }
        let t = self.task_mut(id)?;
        for (slot, view) in views {
            t.sessions.set(slot, view);
        }
        reset_votes(t);
        self.save_tasks()?;
        self.task(id)
    }

    pub fn edit_stage(
        &mut self,
        id: u64,
        slot: SessionSlot,
        stage: u8,
        text: &str,
        version: u64,
    ) -> Result<&AnnotationTask, ServiceError> {
        let t = self.task_mut(id)?;
        if t.committed {
            return Err(ServiceError::AlreadyCommitted(id));
        }
        let view = t
            .sessions
            .get_mut(slot)
            .ok_or(ServiceError::NoSession { task: id, slot })?;
        if view.session.version != version {
            return Err(ServiceError::StaleVersion {
                current: view.session.version,
                given: version,
            });
        }
        view.session.edit_stage(stage, text)?;
        view.stale_stages = view.session.stale_stages();
        reset_votes(t);
        self.save_tasks()?;
        self.task(id)
    }

    /// Record a vote on `slot` (default: the ICL session when it has a
    /// final plan, otherwise the other one).
    pub fn vote(
        &mut self,
        id: u64,
        verdict: Verdict,
        annotator: &str,
        slot: Option<SessionSlot>,
    ) -> Result<&AnnotationTask, ServiceError> {
        let now = self.clock.now();
        let quorum = self.config.quorum.max(1);
        let t = self.task_mut(id)?;
        if t.committed {
            return Err(ServiceError::AlreadyCommitted(id));
        }
        let has_plan = |s: SessionSlot| t.sessions.get(s).is_some_and(|v| v.session.final_plan.is_some());
        let slot = match slot.or(t.voted_session) {
            Some(s) if has_plan(s) => s,
            Some(_) => return Err(ServiceError::NoFinalPlan(id)),
            None if has_plan(SessionSlot::Icl) => SessionSlot::Icl,
            None if has_plan(SessionSlot::NoIcl) => SessionSlot::NoIcl,
            None => return Err(ServiceError::NoFinalPlan(id)),
        };
        if t.voted_session != Some(slot) {
            t.votes.clear();
        }
        t.voted_session = Some(slot);
        t.votes.push(Vote {
            verdict,
            annotator: annotator.to_string(),
            timestamp: now,
        });
        // the latest verdict settles the task once it has a quorum
        let agreeing = t.votes.iter().filter(|x| x.verdict == verdict).count();
        t.status = match verdict {
            _ if agreeing < quorum => RecordStatus::Pending,
            Verdict::Correct => RecordStatus::Verified,
            Verdict::Incorrect => RecordStatus::Rejected,
        };
        self.save_tasks()?;
        self.task(id)
    }

    /// Run the augmentation gate on the voted session. Both `Add` and
    /// `Skip` settle the task.
    pub fn commit(&mut self, id: u64) -> Result<&AnnotationTask, ServiceError> {
        let t = self.task(id)?.clone();
        if t.committed {
            return Err(ServiceError::AlreadyCommitted(id));
        }
        if t.status != RecordStatus::Verified {
            return Err(ServiceError::NotVerified(t.status));
        }
        let view = t
            .voted_session
            .and_then(|s| t.sessions.get(s))
            .ok_or(ServiceError::NoFinalPlan(id))?;
        let plan = view.session.final_plan.clone().ok_or(ServiceError::NoFinalPlan(id))?;
        let scene = view.session.scene.clone();
        let record = PlanRecord {
            id: 0,
            instruction: t.instruction.clone(),
            embedding: embed(&t.instruction, &scene),
            relevant_objects: extract_relevant_objects(&view.session).unwrap_or_default(),
            prompt_cache: view.session.prompt_cache(self.clock.now()),
            scene,
            plan,
            status: RecordStatus::Verified,
            votes: t.votes.clone(),
        };
        let outcome = augmentation_gate(
            record,
            &mut self.store,
            &self.config.thresholds,
            &mut Scorer::Deterministic(Parallelism::Sequential),
        )
        .map_err(|e| match e {
            GateError::NotVerified(s) => ServiceError::NotVerified(s),
            e => ServiceError::Gate(e),
        })?;
        let t = self.task_mut(id)?;
        t.record_id = outcome.record_id;
        t.gate = Some(outcome);
        t.committed = true;
        self.save_tasks()?;
        self.task(id)
    }

    pub fn db_path(&self) -> Option<&Path> {
        self.store.path()
    }
}

fn reset_votes(t: &mut AnnotationTask) {
    t.votes.clear();
    t.voted_session = None;
    t.status = RecordStatus::Pending;
}
