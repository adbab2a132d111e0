//! Listening-test service: hands out blinded trials, collects responses
//! into append-only logs and exports aggregates.

mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use thiserror::Error;
use tower_http::services::ServeDir;
use vqdr::testbench::{Choice, TestbenchError};

pub use store::{Ack, PlanInfo, Session, Store, TrialPayload};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown plan {0}")]
    UnknownPlan(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown stimulus {0}")]
    UnknownStimulus(String),
    #[error("trial {got} requested, next unanswered trial is {expected}")]
    OutOfOrder { expected: usize, got: usize },
    #[error("plan complete: all {total} trials answered")]
    PlanComplete { total: usize },
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Testbench(#[from] TestbenchError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownPlan(_) | ServiceError::UnknownSession(_) | ServiceError::UnknownStimulus(_) => {
                StatusCode::NOT_FOUND
            }
            ServiceError::OutOfOrder { .. } => StatusCode::CONFLICT,
            ServiceError::PlanComplete { .. } => StatusCode::GONE,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Testbench(TestbenchError::BadConfidence(_)) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Testbench(TestbenchError::DuplicateResponse { .. }) => StatusCode::CONFLICT,
            ServiceError::Testbench(_) | ServiceError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    /// Stable machine-readable error name.
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::UnknownPlan(_) => "UnknownPlan",
            ServiceError::UnknownSession(_) => "UnknownSession",
            ServiceError::UnknownStimulus(_) => "UnknownStimulus",
            ServiceError::OutOfOrder { .. } => "OutOfOrder",
            ServiceError::PlanComplete { .. } => "PlanComplete",
            ServiceError::BadRequest(_) => "BadRequest",
            ServiceError::Testbench(TestbenchError::BadConfidence(_)) => "BadConfidence",
            ServiceError::Testbench(TestbenchError::DuplicateResponse { .. }) => "DuplicateResponse",
            ServiceError::Testbench(_) => "TestbenchError",
            ServiceError::Io(_) => "IoError",
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.kind(), "message": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub plan_dir: PathBuf,
    /// Root for relative stimulus paths; defaults to the plan directory.
    pub corpus_root: Option<PathBuf>,
    /// Browser UI assets served at `/`.
    pub static_dir: Option<PathBuf>,
}

#[derive(Deserialize)]
struct NewSession {
    listener_id: String,
}

#[derive(Deserialize)]
struct Submission {
    choice: Choice,
    confidence: i64,
}

type Shared = Arc<Store>;
type ApiResult<T> = Result<T, ServiceError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e)))?
}

async fn health() -> &'static str {
    "ok"
}

async fn list_plans(State(store): State<Shared>) -> Json<Vec<String>> {
    Json(store.plan_ids())
}

async fn plan_info(State(store): State<Shared>, Path(plan): Path<String>) -> ApiResult<Json<PlanInfo>> {
    Ok(Json(store.plan_info(&plan)?))
}

async fn create_session(
    State(store): State<Shared>,
    Path(plan): Path<String>,
    Json(body): Json<NewSession>,
) -> ApiResult<(StatusCode, Json<Session>)> {
    let session = blocking(move || store.create_session(&plan, &body.listener_id)).await?;
    Ok((StatusCode::CREATED, Json(session)))
}

async fn get_session(State(store): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Session>> {
    Ok(Json(store.session(&id)?))
}

async fn get_trial(State(store): State<Shared>, Path((id, n)): Path<(String, usize)>) -> ApiResult<Json<TrialPayload>> {
    Ok(Json(store.get_trial(&id, n)?))
}

async fn submit(
    State(store): State<Shared>,
    Path((id, n)): Path<(String, usize)>,
    Json(body): Json<Submission>,
) -> ApiResult<Json<Ack>> {
    let ack = blocking(move || store.submit_response(&id, n, body.choice, body.confidence)).await?;
    Ok(Json(ack))
}

async fn stimulus(State(store): State<Shared>, Path(token): Path<String>) -> ApiResult<Response> {
    let path = store.stimulus_path(&token)?.to_path_buf();
    let bytes = tokio::task::spawn_blocking(move || std::fs::read(path))
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e)))??;
    Ok(([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response())
}

async fn results(State(store): State<Shared>, Path(plan): Path<String>) -> ApiResult<Response> {
    let csv = store.results_csv(&plan)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

async fn responses(State(store): State<Shared>, Path(plan): Path<String>) -> ApiResult<Response> {
    let jsonl = store.responses_jsonl(&plan)?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], jsonl).into_response())
}

pub fn router(store: Arc<Store>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/plans", get(list_plans))
        .route("/plans/{plan}", get(plan_info))
        .route("/plans/{plan}/sessions", post(create_session))
        .route("/plans/{plan}/results.csv", get(results))
        .route("/plans/{plan}/responses.jsonl", get(responses))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/trials/{n}", get(get_trial))
        .route("/sessions/{id}/trials/{n}/response", post(submit))
        .route("/stimuli/{token}", get(stimulus))
        .with_state(store);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Runs until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let store = Arc::new(Store::open(&config.plan_dir, config.corpus_root.clone())?);
    let app = router(store, config.static_dir.clone());
    let listener = tokio::net::TcpListener::bind(config.listen).await?;
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
