//! JSON-over-HTTP front end for [`SessionRegistry`].
//!
//! | route                        | success | body                                        |
//! |------------------------------|---------|---------------------------------------------|
//! | `POST /sessions`             | 201     | `{session_id, reference_id, target_id, state}` |
//! | `POST /sessions/{id}/describe` | 200   | `{predicted_id, attempt_index, state}`      |
//! | `POST /sessions/{id}/judge`  | 200     | `{state, attempt_index, shown_reference_id}` |
//! | `GET /sessions/{id}`         | 200     | the full session                            |
//! | `GET /catalog`               | 200     | `{samples: [...]}`                          |
//! | `GET /metrics[?final_only=true]` | 200 | `{report: MetricsReport or null}`           |
//! | `POST /plan`                 | 200     | `{seed, pairs}`                             |
//!
//! Errors are `{"error": kind, "message": text}`: 404 unknown session, 409
//! wrong state, 422 invalid input, 502 embedding backend failure.

use std::future::Future;
use std::io;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use texhand_core::{plan_assignments, Assignment, ConfusionMode, GameError, SessionState, TextileId, VectorError};
use tokio::net::TcpListener;

use crate::registry::{RegistryError, SessionRegistry};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self { status, kind, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.kind, "message": self.message}))).into_response()
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let message = e.to_string();
        let (status, kind) = match &e {
            RegistryError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            RegistryError::Game(g) => match g {
                GameError::WrongState { .. } | GameError::AttemptCap(_) => (StatusCode::CONFLICT, "wrong_state"),
                GameError::Vector(VectorError::NoCandidates) => (StatusCode::CONFLICT, "no_candidates"),
                GameError::Backend(_) => (StatusCode::BAD_GATEWAY, "backend"),
                GameError::Vector(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
                _ => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            },
            RegistryError::Log(_) | RegistryError::Metrics(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError::new(status, kind, message)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        let kind = if e.status() == StatusCode::UNPROCESSABLE_ENTITY { "validation" } else { "bad_request" };
        ApiError::new(e.status(), kind, e.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Deserialize)]
struct StartBody {
    target_id: TextileId,
    reference_id: TextileId,
}

#[derive(Serialize)]
struct Started {
    session_id: String,
    reference_id: TextileId,
    target_id: TextileId,
    state: SessionState,
}

#[derive(Deserialize)]
struct DescribeBody {
    text: String,
}

#[derive(Serialize)]
struct DescribeReply {
    predicted_id: TextileId,
    attempt_index: u32,
    state: SessionState,
}

#[derive(Deserialize)]
struct JudgeBody {
    correct: bool,
    #[serde(default)]
    validity: Option<i64>,
    #[serde(default)]
    similarity: Option<i64>,
}

#[derive(Serialize)]
struct JudgeReply {
    state: SessionState,
    attempt_index: u32,
    shown_reference_id: TextileId,
}

#[derive(Deserialize)]
struct MetricsQuery {
    #[serde(default)]
    final_only: bool,
}

#[derive(Deserialize)]
struct PlanBody {
    seed: u64,
}

fn rating(v: Option<i64>) -> ApiResult<Option<u8>> {
    v.map(|r| {
        u8::try_from(r).map_err(|_| {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", format!("rating {r} outside 1..=10"))
        })
    })
    .transpose()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, RegistryError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

async fn start_session(
    State(reg): State<Arc<SessionRegistry>>,
    body: Result<Json<StartBody>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Started>)> {
    let Json(body) = body?;
    let assignment = Assignment { target_id: body.target_id, reference_id: body.reference_id };
    let session = blocking(move || reg.start(assignment)).await?;
    tracing::info!(session = %session.session_id, target = %body.target_id, reference = %body.reference_id, "session started");
    Ok((
        StatusCode::CREATED,
        Json(Started {
            session_id: session.session_id,
            reference_id: session.assignment.reference_id,
            target_id: session.assignment.target_id,
            state: session.state,
        }),
    ))
}

async fn describe(
    State(reg): State<Arc<SessionRegistry>>,
    Path(id): Path<String>,
    body: Result<Json<DescribeBody>, JsonRejection>,
) -> ApiResult<Json<DescribeReply>> {
    let Json(body) = body?;
    let d = blocking(move || reg.describe(&id, &body.text)).await?;
    Ok(Json(DescribeReply { predicted_id: d.predicted_id, attempt_index: d.attempt_index, state: d.state }))
}

async fn judge(
    State(reg): State<Arc<SessionRegistry>>,
    Path(id): Path<String>,
    body: Result<Json<JudgeBody>, JsonRejection>,
) -> ApiResult<Json<JudgeReply>> {
    let Json(body) = body?;
    let (validity, similarity) = (rating(body.validity)?, rating(body.similarity)?);
    let s = blocking(move || reg.judge(&id, body.correct, validity, similarity)).await?;
    if s.state.is_terminal() {
        tracing::info!(session = %s.session_id, state = ?s.state, attempts = s.attempts.len(), "session finished");
    }
    Ok(Json(JudgeReply {
        state: s.state,
        attempt_index: s.attempts.len() as u32,
        shown_reference_id: s.shown_reference_id,
    }))
}

async fn get_session(State(reg): State<Arc<SessionRegistry>>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = blocking(move || reg.get(&id)).await?;
    Ok(Json(s).into_response())
}

async fn catalog(State(reg): State<Arc<SessionRegistry>>) -> Response {
    Json(reg.catalog()).into_response()
}

async fn metrics(State(reg): State<Arc<SessionRegistry>>, Query(q): Query<MetricsQuery>) -> ApiResult<Response> {
    let mode = if q.final_only { ConfusionMode::FinalOnly } else { ConfusionMode::PerAttempt };
    let report = blocking(move || reg.report(mode)).await?;
    Ok(Json(json!({ "report": report })).into_response())
}

async fn plan(State(reg): State<Arc<SessionRegistry>>, body: Result<Json<PlanBody>, JsonRejection>) -> ApiResult<Response> {
    let Json(body) = body?;
    let plan = plan_assignments(reg.catalog(), body.seed)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", e.to_string()))?;
    Ok(Json(plan).into_response())
}

pub fn router(registry: Arc<SessionRegistry>) -> Router {
    Router::new()
        .route("/sessions", post(start_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/describe", post(describe))
        .route("/sessions/{id}/judge", post(judge))
        .route("/catalog", get(catalog))
        .route("/metrics", get(metrics))
        .route("/plan", post(plan))
        .with_state(registry)
}

/// Serves until `shutdown` resolves, then logs unfinished sessions as
/// abandoned and flushes the log.
pub async fn serve(
    listener: TcpListener,
    registry: Arc<SessionRegistry>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(registry.clone())).with_graceful_shutdown(shutdown).await?;
    let abandoned = tokio::task::spawn_blocking(move || registry.shutdown()).await.map_err(io::Error::other)??;
    tracing::info!(abandoned, "shut down");
    Ok(())
}
