//! JSON-over-HTTP routes. Every response body is an object carrying
//! `schema_version`.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use metaplan_core::planner::EditError;
use metaplan_core::rag_store::Verdict;

use crate::service::{PlanMode, Service, ServiceError, SessionSlot};

pub const API_SCHEMA_VERSION: u32 = 1;

pub type Shared = Arc<Mutex<Service>>;

#[derive(Debug, Deserialize)]
pub struct CreateTask {
    pub instruction: String,
    pub scene_ref: String,
}

#[derive(Debug, Deserialize)]
pub struct PlanRequest {
    pub mode: PlanMode,
}

#[derive(Debug, Deserialize)]
pub struct EditRequest {
    pub session: SessionSlot,
    pub text: String,
    pub version: u64,
}

#[derive(Debug, Deserialize)]
pub struct VoteRequest {
    pub verdict: Verdict,
    pub annotator: String,
    #[serde(default)]
    pub session: Option<SessionSlot>,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    kind: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostics: Option<Value>,
}

fn ok(status: StatusCode, key: &str, value: impl Serialize) -> Response {
    let body = json!({ "schema_version": API_SCHEMA_VERSION, key: value });
    (status, Json(body)).into_response()
}

fn error_response(err: ServiceError) -> Response {
    use ServiceError::*;
    let (status, kind) = match &err {
        UnknownScene(_) => (StatusCode::NOT_FOUND, "unknown_scene"),
        UnknownTask(_) => (StatusCode::NOT_FOUND, "unknown_task"),
        UnknownRecord(_) => (StatusCode::NOT_FOUND, "unknown_record"),
        EmptyInstruction => (StatusCode::UNPROCESSABLE_ENTITY, "empty_instruction"),
        NoSession { .. } => (StatusCode::CONFLICT, "no_session"),
        StaleVersion { .. } => (StatusCode::CONFLICT, "stale_version"),
        Edit(EditError::NoSuchStage(_)) => (StatusCode::NOT_FOUND, "no_such_stage"),
        Edit(EditError::StageMissing(_)) => (StatusCode::CONFLICT, "stage_missing"),
        Edit(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_meta_action_text"),
        NoFinalPlan(_) => (StatusCode::CONFLICT, "no_final_plan"),
        NotVerified(_) => (StatusCode::CONFLICT, "not_verified"),
        AlreadyCommitted(_) => (StatusCode::CONFLICT, "already_committed"),
        Model(_) => (StatusCode::BAD_GATEWAY, "model"),
        Gate(_) => (StatusCode::UNPROCESSABLE_ENTITY, "gate"),
        Store(_) | Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
    };
    let diagnostics = match &err {
        Edit(e @ EditError::ChainRejected(report)) => Some(json!({
            "index": e.location(),
            "report": report,
        })),
        Edit(e @ EditError::InvalidMetaActionText(_)) => Some(json!({ "line": e.location() })),
        StaleVersion { current, .. } => Some(json!({ "current_version": current })),
        _ => None,
    };
    let body = json!({
        "schema_version": API_SCHEMA_VERSION,
        "error": ErrorBody { kind, message: err.to_string(), diagnostics },
    });
    (status, Json(body)).into_response()
}

/// Run `f` against the service off the async executor; planning may block
/// on a live model.
async fn with<F>(state: Shared, f: F) -> Response
where
    F: FnOnce(&mut Service) -> Result<Response, ServiceError> + Send + 'static,
{
    let joined = tokio::task::spawn_blocking(move || f(&mut state.lock())).await;
    match joined {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => error_response(e),
        Err(e) => {
            let body = json!({
                "schema_version": API_SCHEMA_VERSION,
                "error": { "kind": "internal", "message": e.to_string() },
            });
            (StatusCode::INTERNAL_SERVER_ERROR, Json(body)).into_response()
        }
    }
}

async fn create_task(State(s): State<Shared>, Json(req): Json<CreateTask>) -> Response {
    with(s, move |svc| {
        let t = svc.create_task(&req.instruction, &req.scene_ref)?;
        Ok(ok(StatusCode::CREATED, "task", t))
    })
    .await
}

async fn list_tasks(State(s): State<Shared>) -> Response {
    with(s, |svc| Ok(ok(StatusCode::OK, "tasks", svc.tasks()))).await
}

async fn plan(State(s): State<Shared>, Path(id): Path<u64>, Json(req): Json<PlanRequest>) -> Response {
    with(s, move |svc| Ok(ok(StatusCode::OK, "task", svc.plan(id, req.mode)?))).await
}

async fn edit_stage(
    State(s): State<Shared>,
    Path((id, stage)): Path<(u64, u8)>,
    Json(req): Json<EditRequest>,
) -> Response {
    with(s, move |svc| {
        let t = svc.edit_stage(id, req.session, stage, &req.text, req.version)?;
        Ok(ok(StatusCode::OK, "task", t))
    })
    .await
}

async fn vote(State(s): State<Shared>, Path(id): Path<u64>, Json(req): Json<VoteRequest>) -> Response {
    with(s, move |svc| {
        let t = svc.vote(id, req.verdict, &req.annotator, req.session)?;
        Ok(ok(StatusCode::OK, "task", t))
    })
    .await
}

async fn commit(State(s): State<Shared>, Path(id): Path<u64>) -> Response {
    with(s, move |svc| Ok(ok(StatusCode::OK, "task", svc.commit(id)?))).await
}

async fn list_records(State(s): State<Shared>) -> Response {
    with(s, |svc| Ok(ok(StatusCode::OK, "records", svc.store().records()))).await
}

async fn get_record(State(s): State<Shared>, Path(id): Path<u64>) -> Response {
    with(s, move |svc| Ok(ok(StatusCode::OK, "record", svc.record(id)?))).await
}

pub fn router(service: Service) -> Router {
    let state: Shared = Arc::new(Mutex::new(service));
    Router::new()
        .route("/tasks", post(create_task).get(list_tasks))
        .route("/tasks/{id}/plan", post(plan))
        .route("/tasks/{id}/stages/{n}", put(edit_stage))
        .route("/tasks/{id}/vote", post(vote))
        .route("/tasks/{id}/commit", post(commit))
        .route("/records", get(list_records))
        .route("/records/{id}", get(get_record))
        .with_state(state)
}
