//! Replication endpoints over a [`ReplicationServer`].

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Query, State};
use axum::http::{HeaderMap, HeaderValue};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde::Serialize;

use openchamber_core::datastore::KindSet;
use openchamber_core::syncproto::{
    CheckpointRequest, PushBatch, ReplicationServer, BATCH_SIZE, PROTOCOL_VERSION, VERSION_HEADER,
};

use crate::error::ApiError;

/// Push bodies carry up to a hundred full telemetry batches.
pub const MAX_PUSH_BYTES: usize = 64 << 20;
/// Largest page a client may ask for.
pub const MAX_PAGE: usize = 1000;

pub fn replication_router(server: Arc<ReplicationServer>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/replicate/push", post(push))
        .route("/replicate/changes", get(changes))
        .route("/replicate/checkpoint", post(checkpoint))
        .layer(DefaultBodyLimit::max(MAX_PUSH_BYTES))
        .with_state(server)
}

/// A missing header counts as version 0 and is refused like any other
/// mismatch.
fn version(headers: &HeaderMap) -> u32 {
    headers.get(VERSION_HEADER).and_then(|v| v.to_str().ok()).and_then(|v| v.trim().parse().ok()).unwrap_or(0)
}

fn versioned<T: Serialize>(body: T) -> Response {
    let mut resp = Json(body).into_response();
    resp.headers_mut().insert(VERSION_HEADER, HeaderValue::from(PROTOCOL_VERSION));
    resp
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))?
}

async fn health(State(server): State<Arc<ReplicationServer>>) -> Response {
    versioned(server.health())
}

async fn push(
    State(server): State<Arc<ReplicationServer>>,
    headers: HeaderMap,
    body: Result<Json<PushBatch>, JsonRejection>,
) -> Result<Response, ApiError> {
    let v = version(&headers);
    ReplicationServer::check_version(v)?;
    let Json(batch) = body?;
    let ack = blocking(move || Ok(server.push(v, &batch)?)).await?;
    Ok(versioned(ack))
}

#[derive(Debug, Deserialize)]
struct ChangesQuery {
    #[serde(default)]
    since: u64,
    filter: Option<String>,
    peer: String,
    limit: Option<usize>,
}

async fn changes(
    State(server): State<Arc<ReplicationServer>>,
    headers: HeaderMap,
    q: Result<Query<ChangesQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let v = version(&headers);
    ReplicationServer::check_version(v)?;
    let Query(q) = q?;
    let filter: KindSet = match q.filter.as_deref() {
        None | Some("") => KindSet::all(),
        Some(f) => f.parse().map_err(ApiError::bad_request)?,
    };
    let limit = q.limit.unwrap_or(BATCH_SIZE).min(MAX_PAGE);
    let page = blocking(move || Ok(server.changes(v, &q.peer, q.since, &filter, limit)?)).await?;
    Ok(versioned(page))
}

async fn checkpoint(
    State(server): State<Arc<ReplicationServer>>,
    headers: HeaderMap,
    body: Result<Json<CheckpointRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let v = version(&headers);
    ReplicationServer::check_version(v)?;
    let Json(req) = body?;
    let resp = blocking(move || Ok(server.checkpoint(v, &req)?)).await?;
    Ok(versioned(resp))
}
