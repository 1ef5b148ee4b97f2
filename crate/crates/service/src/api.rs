//! HTTP routes under `/api/v1`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State as Extract};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::NaiveDate;
use medplan_core::retrieval::PatientContext;
use medplan_core::soap::{validate_assessment, validate_inputs};
use medplan_core::SoapNote;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc::error::TrySendError;

use crate::app::{Job, State};
use crate::store::StoreError;
use crate::tasks::{TaskKind, TaskRequest};

pub const DEFAULT_HISTORY_LIMIT: usize = 20;

/// Error body: `{code, message}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status: status.as_u16(), code: code.into(), message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_body", e.to_string()))
}

fn rejected(reason: medplan_core::RejectReason) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, reason.code(), format!("input rejected: {reason}"))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubmitBody {
    mrn: String,
    subjective: String,
    objective: String,
    #[serde(default)]
    new_patient: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanBody {
    mrn: String,
    subjective: String,
    objective: String,
    assessment: String,
    #[serde(default)]
    new_patient: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Submitted {
    pub task_id: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoteBody {
    #[serde(default)]
    mrn: Option<String>,
    visit_date: NaiveDate,
    subjective: String,
    objective: String,
    #[serde(default)]
    assessment: String,
    #[serde(default)]
    plan: String,
    #[serde(default)]
    department: Option<String>,
}

#[derive(Debug, Deserialize)]
struct HistoryParams {
    limit: Option<usize>,
}

pub(crate) fn router(state: Arc<State>) -> Router {
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/assessment", post(submit_assessment))
        .route("/api/v1/plan", post(submit_plan))
        .route("/api/v1/pipeline", post(submit_pipeline))
        .route("/api/v1/tasks/{id}", get(poll_task))
        .route("/api/v1/patients/{mrn}/history", get(get_history))
        .route("/api/v1/patients/{mrn}/notes", post(ingest_note))
        .with_state(state)
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

fn submit(state: &State, kind: TaskKind, request: TaskRequest) -> ApiResult<(StatusCode, Json<Submitted>)> {
    let known = state.store.contains(&request.mrn);
    if !known && state.config.strict_mrn && !request.new_patient {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_mrn", format!("no patient with mrn {}", request.mrn)));
    }
    // History is frozen at submission so later ingests cannot change what the task sees.
    let history = state.store.visits(&request.mrn).unwrap_or_default();
    let patient = PatientContext::new(request.mrn.clone(), history);
    let task = state
        .tasks
        .create(kind, request)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    let job = Job { task_id: task.task_id.clone(), kind, patient };
    match state.queue.try_send(job) {
        Ok(()) => {
            tracing::debug!(task = %task.task_id, ?kind, "queued");
            Ok((StatusCode::ACCEPTED, Json(Submitted { task_id: task.task_id })))
        }
        Err(TrySendError::Full(_)) => {
            state.tasks.discard(&task.task_id);
            Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "queue_full", "task queue is full, retry later"))
        }
        Err(TrySendError::Closed(_)) => {
            state.tasks.discard(&task.task_id);
            Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "shutting_down", "worker pool has stopped"))
        }
    }
}

async fn submit_assessment(Extract(state): Extract<Arc<State>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let b: SubmitBody = parse(&body)?;
    let (s, o) = validate_inputs(&b.subjective, &b.objective).map_err(rejected)?;
    let req = TaskRequest { mrn: b.mrn, subjective: s, objective: o, assessment: None, new_patient: b.new_patient };
    submit(&state, TaskKind::Assessment, req)
}

async fn submit_pipeline(Extract(state): Extract<Arc<State>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let b: SubmitBody = parse(&body)?;
    let (s, o) = validate_inputs(&b.subjective, &b.objective).map_err(rejected)?;
    let req = TaskRequest { mrn: b.mrn, subjective: s, objective: o, assessment: None, new_patient: b.new_patient };
    submit(&state, TaskKind::Pipeline, req)
}

async fn submit_plan(Extract(state): Extract<Arc<State>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let b: PlanBody = parse(&body)?;
    let (s, o) = validate_inputs(&b.subjective, &b.objective).map_err(rejected)?;
    let a = validate_assessment(&b.assessment).map_err(rejected)?;
    let req = TaskRequest { mrn: b.mrn, subjective: s, objective: o, assessment: Some(a), new_patient: b.new_patient };
    submit(&state, TaskKind::Plan, req)
}

async fn poll_task(Extract(state): Extract<Arc<State>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    state
        .tasks
        .get(&id)
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "task_not_found", format!("no task {id}")))
}

async fn get_history(
    Extract(state): Extract<Arc<State>>,
    Path(mrn): Path<String>,
    Query(params): Query<HistoryParams>,
) -> ApiResult<Json<Vec<SoapNote>>> {
    let limit = params.limit.unwrap_or(DEFAULT_HISTORY_LIMIT);
    state
        .store
        .history(&mrn, limit)
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_mrn", format!("no patient with mrn {mrn}")))
}

async fn ingest_note(
    Extract(state): Extract<Arc<State>>,
    Path(mrn): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<SoapNote>)> {
    let b: NoteBody = parse(&body)?;
    if b.mrn.as_ref().is_some_and(|m| *m != mrn) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "mrn_mismatch", "body mrn differs from the path"));
    }
    let note = SoapNote::new(&mrn, b.visit_date, &b.subjective, &b.objective, &b.assessment, &b.plan).with_department(b.department);
    let state = state.clone();
    let stored = tokio::task::spawn_blocking(move || state.ingest(note))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    match stored {
        Ok(note) => Ok((StatusCode::CREATED, Json(note))),
        Err(StoreError::Invalid(r)) => Err(rejected(r)),
        Err(e @ StoreError::Duplicate) => Err(ApiError::new(StatusCode::CONFLICT, "duplicate", e.to_string())),
        Err(e @ StoreError::OutOfOrder { .. }) => Err(ApiError::new(StatusCode::BAD_REQUEST, "out_of_order", e.to_string())),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_error", e.to_string())),
    }
}
