//! JSON-over-HTTP front for the annotation service.
//!
//! All state lives behind one mutex, so requests are applied in a single
//! total order and every mutation reaches the journal before its response.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::Deserialize;
use serde_json::json;

use discrim_core::annotation::{AnnotationError, AnnotationService};
use discrim_core::trainset::Label;

pub const TOKEN_ENV: &str = "DISCRIM_ANNOTATE_TOKEN";

pub struct AppState {
    service: Mutex<AnnotationService>,
    history: Option<PathBuf>,
    token: Option<String>,
}

impl AppState {
    pub fn new(service: AnnotationService) -> Self {
        AppState { service: Mutex::new(service), history: None, token: None }
    }

    /// Active-learning history CSV served to the dashboard.
    pub fn with_history(mut self, path: impl Into<PathBuf>) -> Self {
        self.history = Some(path.into());
        self
    }

    /// Require `Authorization: Bearer <token>` on every request.
    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    fn service(&self) -> MutexGuard<'_, AnnotationService> {
        // a panic mid-request cannot leave the event log half applied, so keep serving
        self.service.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        let status = match &e {
            AnnotationError::AnnotatorInactive(_) => StatusCode::FORBIDDEN,
            AnnotationError::UnknownAnnotator(_) | AnnotationError::UnknownTask(_) => StatusCode::NOT_FOUND,
            AnnotationError::DuplicateTask(_)
            | AnnotationError::NotAssigned { .. }
            | AnnotationError::DuplicateJudgment { .. }
            | AnnotationError::NotInConflict(_) => StatusCode::CONFLICT,
            AnnotationError::EmptyId => StatusCode::BAD_REQUEST,
            AnnotationError::Journal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Deserialize)]
struct NextQuery {
    annotator: String,
}

#[derive(Deserialize)]
struct JudgmentBody {
    task_id: String,
    annotator_id: String,
    label: Label,
}

#[derive(Deserialize)]
struct AdjudicateBody {
    label: Label,
    adjudicator_id: String,
}

async fn next_task(State(s): State<Arc<AppState>>, Query(q): Query<NextQuery>) -> ApiResult<Response> {
    let task = s.service().next_task(&q.annotator)?;
    Ok(Json(json!({ "task": task })).into_response())
}

async fn submit(State(s): State<Arc<AppState>>, Json(b): Json<JudgmentBody>) -> ApiResult<Response> {
    let out = s.service().submit_judgment(&b.task_id, &b.annotator_id, b.label, Utc::now())?;
    Ok(Json(out).into_response())
}

async fn conflicts(State(s): State<Arc<AppState>>) -> Response {
    Json(s.service().conflicts()).into_response()
}

async fn adjudicate(
    State(s): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(b): Json<AdjudicateBody>,
) -> ApiResult<Response> {
    let agg = s.service().adjudicate(&id, b.label, &b.adjudicator_id, Utc::now())?;
    Ok(Json(agg).into_response())
}

async fn aggregate(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    Ok(Json(s.service().aggregate(&id)?).into_response())
}

async fn export_labels(State(s): State<Arc<AppState>>) -> ApiResult<Response> {
    let export = s.service().export();
    let mut buf = Vec::new();
    export.write_csv(&mut buf).map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let mut resp = ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], buf).into_response();
    if let Some(m) = export.mean_confidence {
        if let Ok(v) = m.to_string().parse() {
            resp.headers_mut().insert("x-mean-confidence", v);
        }
    }
    Ok(resp)
}

async fn annotator(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let svc = s.service();
    let a = svc.annotator(&id).ok_or_else(|| AnnotationError::UnknownAnnotator(id.clone()))?;
    Ok(Json(a).into_response())
}

async fn stop(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    Ok(Json(s.service().stop(&id)?).into_response())
}

async fn history(State(s): State<Arc<AppState>>) -> ApiResult<Response> {
    let missing = || ApiError(StatusCode::NOT_FOUND, "no active-learning history available".into());
    let path = s.history.as_deref().ok_or_else(missing)?;
    let body = std::fs::read(path).map_err(|_| missing())?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], body).into_response())
}

async fn require_token(State(s): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &s.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError(StatusCode::UNAUTHORIZED, "missing or wrong bearer token".into()).into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/tasks/next", get(next_task))
        .route("/judgments", post(submit))
        .route("/tasks/conflicts", get(conflicts))
        .route("/tasks/{id}/adjudicate", post(adjudicate))
        .route("/tasks/{id}/aggregate", get(aggregate))
        .route("/export/labels", get(export_labels))
        .route("/annotators/{id}", get(annotator))
        .route("/annotators/{id}/stop", post(stop))
        .route("/active-learning/history", get(history))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

#[derive(Deserialize)]
struct TaskRow {
    #[serde(alias = "task_id")]
    id: String,
    text: String,
    #[serde(default)]
    label: Option<String>,
}

/// Queue tasks from a CSV with `id` (or `task_id`) and `text` columns. Test
/// tasks also need a gold `label`. Ids already known to the service are
/// skipped so a replayed journal and its source file can be loaded together.
/// Returns the number of tasks added.
pub fn load_tasks(service: &mut AnnotationService, path: &Path, test: bool) -> discrim_core::Result<usize> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| discrim_core::Error::Config(format!("{}: {e}", path.display())))?;
    let mut added = 0;
    for row in rdr.deserialize::<TaskRow>() {
        let row = row?;
        if service.contains_task(&row.id) {
            continue;
        }
        let res = if test {
            let gold: Label = row
                .label
                .as_deref()
                .ok_or_else(|| discrim_core::Error::Config(format!("test task {} has no label", row.id)))?
                .parse()?;
            service.add_test_task(&row.id, &row.text, gold)
        } else {
            service.add_task(&row.id, &row.text)
        };
        res?;
        added += 1;
    }
    Ok(added)
}
