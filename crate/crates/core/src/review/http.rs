//! JSON API over [`ReviewQueue`].
//!
//! | method | path                   | success                       |
//! |--------|------------------------|-------------------------------|
//! | GET    | /queue/next            | 200 item, 204 when drained    |
//! | GET    | /items/{id}            | 200 item                      |
//! | POST   | /items/{id}/decision   | 200 outcome                   |
//! | GET    | /progress              | 200 counts                    |
//! | GET    | /export/d3             | 200 array of dataset records  |
//!
//! Every API route needs `Authorization: Bearer <token>`. Errors are
//! `{"error": <name>, "message": …}` with 400/401/404/409/500.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{FromRequestParts, Path, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{DecisionRequest, ItemStatus, QueueItem, ReviewError, ReviewQueue, Reviewer};
use crate::model::{EvalVerdict, Language, Origin};
use crate::records::ExportStage;

/// What the UI shows for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub id: String,
    pub image_ref: String,
    pub answer: String,
    pub language: Language,
    pub rationale: String,
    pub revision: u32,
    pub origin: Origin,
    pub version: u64,
    pub status: ItemStatus,
    pub claimed_by: Option<String>,
    pub claimed_until: Option<DateTime<Utc>>,
    pub last_verdict: Option<EvalVerdict>,
    pub l_max: usize,
}

impl ItemView {
    fn new(item: QueueItem, l_max: usize) -> Self {
        let s = &item.sample;
        ItemView {
            id: item.id.clone(),
            image_ref: s.raw.image_ref.clone(),
            answer: s.raw.answer.clone(),
            language: s.raw.language,
            rationale: s.rationale.text().to_string(),
            revision: s.rationale.revision(),
            origin: s.rationale.origin(),
            version: item.version,
            status: item.status,
            claimed_by: item.claimed_by.clone(),
            claimed_until: item.claimed_until,
            last_verdict: s.last_verdict().cloned(),
            l_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_version: Option<u64>,
}

pub struct ApiError(ReviewError);

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            ReviewError::Unauthorized => StatusCode::UNAUTHORIZED,
            ReviewError::VersionConflict { .. } => StatusCode::CONFLICT,
            ReviewError::UnknownItem(_) => StatusCode::NOT_FOUND,
            ReviewError::InvalidDecision(_) => StatusCode::BAD_REQUEST,
            ReviewError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let current_version = match &self.0 {
            ReviewError::VersionConflict { current, .. } => Some(*current),
            _ => None,
        };
        let body = ErrorBody {
            error: self.0.name().to_string(),
            message: self.0.to_string(),
            current_version,
        };
        let mut resp = (status, Json(body)).into_response();
        if status == StatusCode::UNAUTHORIZED {
            resp.headers_mut().insert(
                header::WWW_AUTHENTICATE,
                header::HeaderValue::from_static("Bearer"),
            );
        }
        resp
    }
}

type AppState = Arc<ReviewQueue>;

struct Auth(Reviewer);

impl FromRequestParts<AppState> for Auth {
    type Rejection = ApiError;

    async fn from_request_parts(
        parts: &mut Parts,
        state: &AppState,
    ) -> Result<Self, Self::Rejection> {
        let value = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok());
        let value = value.filter(|v| v.starts_with("Bearer "));
        Ok(Auth(state.authenticate(value)?))
    }
}

async fn next(State(q): State<AppState>, Auth(who): Auth) -> Response {
    match q.next_item(&who) {
        Some(item) => Json(ItemView::new(item, q.eval_config().l_max)).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn item(
    State(q): State<AppState>,
    Auth(_): Auth,
    Path(id): Path<String>,
) -> Result<Json<ItemView>, ApiError> {
    Ok(Json(ItemView::new(q.item(&id)?, q.eval_config().l_max)))
}

async fn decide(
    State(q): State<AppState>,
    Auth(who): Auth,
    Path(id): Path<String>,
    body: Result<Json<DecisionRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(request) = body.map_err(|e| ReviewError::InvalidDecision(e.body_text()))?;
    Ok(Json(q.decide(&who, &id, request)?).into_response())
}

async fn progress(State(q): State<AppState>, Auth(_): Auth) -> Json<super::Progress> {
    Json(q.progress())
}

async fn export_d3(
    State(q): State<AppState>,
    Auth(_): Auth,
) -> Json<Vec<crate::records::DatasetRecord>> {
    let store = q.store();
    Json(
        store.with_state(|st| crate::pipeline::export_records(st, store.run_id(), ExportStage::D3)),
    )
}

/// API routes, plus the reviewer UI from `ui_dir` at `/` when given.
pub fn router(queue: Arc<ReviewQueue>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/queue/next", get(next))
        .route("/items/{id}", get(item))
        .route("/items/{id}/decision", post(decide))
        .route("/progress", get(progress))
        .route("/export/d3", get(export_d3))
        .with_state(queue);
    match ui_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until ctrl-c.
pub async fn serve(
    addr: SocketAddr,
    queue: Arc<ReviewQueue>,
    ui_dir: Option<PathBuf>,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "review service listening");
    axum::serve(listener, router(queue, ui_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
