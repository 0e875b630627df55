//! JSON-over-HTTP routes for the annotation UI.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use crate::service::{LabelService, LabelSubmission, ServiceError};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::UnknownRun(_) => StatusCode::NOT_FOUND,
            ServiceError::NotSuccessful(_) | ServiceError::Malformed(_) | ServiceError::Agreement(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ServiceError::NoOverlap(..) | ServiceError::Unresolved(_) => StatusCode::CONFLICT,
            ServiceError::DuplicateRun(_) | ServiceError::Labels(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = json!({ "error": self.to_string() });
        if let ServiceError::Unresolved(runs) = &self {
            body["unresolved"] = json!(runs);
        }
        (status, Json(body)).into_response()
    }
}

type Shared = Arc<LabelService>;

#[derive(Deserialize)]
struct NextParams {
    annotator: String,
    session: String,
    limit: Option<usize>,
}

async fn next_runs(State(svc): State<Shared>, Query(q): Query<NextParams>) -> Response {
    let runs = svc.next_batch(&q.annotator, &q.session, q.limit);
    let limit = q.limit.unwrap_or(svc.batch_limit());
    Json(json!({
        "runs": runs,
        "session_count": svc.session_count(&q.annotator, &q.session),
        "batch_limit": limit,
    }))
    .into_response()
}

async fn run_view(State(svc): State<Shared>, Path(id): Path<String>) -> Response {
    match svc.run_view(&id) {
        Ok(view) => Json(view).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn media(State(svc): State<Shared>, Path(file): Path<String>) -> Response {
    let Some(path) = svc.media_path(&file) else {
        return (StatusCode::NOT_FOUND, Json(json!({ "error": format!("no media `{file}`") }))).into_response();
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "video/mp4")], bytes).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({ "error": e.to_string() }))).into_response(),
    }
}

async fn post_label(State(svc): State<Shared>, Json(submission): Json<LabelSubmission>) -> Response {
    match tokio::task::spawn_blocking(move || svc.submit_label(submission)).await {
        Ok(Ok(ack)) => Json(ack).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({ "error": e.to_string() }))).into_response(),
    }
}

#[derive(Deserialize)]
struct AgreementParams {
    a: String,
    b: String,
}

async fn agreement(State(svc): State<Shared>, Query(q): Query<AgreementParams>) -> Response {
    match svc.agreement(&q.a, &q.b) {
        Ok(view) => Json(view).into_response(),
        Err(e) => e.into_response(),
    }
}

#[derive(Deserialize)]
struct ExportParams {
    #[serde(default)]
    partial: bool,
    /// `json` (default) or `csv`.
    format: Option<String>,
    /// With `format=csv`: `labels` (default) or `resolved`.
    file: Option<String>,
}

async fn export(State(svc): State<Shared>, Query(q): Query<ExportParams>) -> Response {
    let export = match svc.export(q.partial) {
        Ok(e) => e,
        Err(e) => return e.into_response(),
    };
    match q.format.as_deref().unwrap_or("json") {
        "json" => Json(export).into_response(),
        "csv" => {
            let body = match q.file.as_deref().unwrap_or("labels") {
                "labels" => export.labels_csv,
                "resolved" => export.resolved_csv,
                other => {
                    return ServiceError::Malformed(format!("unknown export file `{other}`")).into_response();
                }
            };
            ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], body).into_response()
        }
        other => ServiceError::Malformed(format!("unknown export format `{other}`")).into_response(),
    }
}

pub fn router(service: Arc<LabelService>) -> Router {
    Router::new()
        .route("/runs/next", get(next_runs))
        .route("/runs/{id}", get(run_view))
        .route("/media/{file}", get(media))
        .route("/labels", post(post_label))
        .route("/agreement", get(agreement))
        .route("/export", get(export))
        .with_state(service)
}

/// Binds `addr` and serves until `shutdown` resolves.
pub async fn serve(
    addr: SocketAddr,
    service: Arc<LabelService>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("label service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(shutdown)
        .await
}
