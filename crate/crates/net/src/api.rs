//! Operator REST API over a running control loop and its store.
//!
//! Reads come straight from the published status snapshot or the store;
//! every mutation goes through the control loop's command queue (runs,
//! actuation, configuration) or is a single store write (recipes).

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use openchamber_core::control::live::ControlHandle;
use openchamber_core::control::{Effect, EffectCommand, ManualOrder};
use openchamber_core::datastore::{DataPoint, DocKind, Store, Stream};
use openchamber_core::recipe::{parse_recipe, recipe_to_value, Recipe};
use openchamber_core::Variable;

use crate::error::ApiError;

#[derive(Clone)]
pub struct ApiState {
    pub control: ControlHandle,
    pub store: Arc<Store>,
    // PATCH /config is read-modify-write; one at a time
    patch_lock: Arc<tokio::sync::Mutex<()>>,
}

impl ApiState {
    pub fn new(control: ControlHandle, store: Arc<Store>) -> Self {
        ApiState { control, store, patch_lock: Arc::default() }
    }
}

pub fn api_router(state: ApiState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/state", get(get_state))
        .route("/telemetry", get(get_telemetry))
        .route("/telemetry.csv", get(get_telemetry_csv))
        .route("/recipes", get(list_recipes).post(post_recipe))
        .route("/recipes/{id}", get(get_recipe))
        .route("/runs", get(list_runs).post(start_run))
        .route("/runs/current/abort", post(abort_run))
        .route("/actuate", post(actuate))
        .route("/config", get(get_config).patch(patch_config))
        .with_state(state)
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))?
}

async fn health(State(s): State<ApiState>) -> Json<Value> {
    Json(json!({ "status": "ok", "time": s.control.status().time }))
}

async fn get_state(State(s): State<ApiState>) -> Json<Value> {
    let status = s.control.status();
    let phase = status.run.as_ref().map_or(json!("idle"), |r| json!(r.phase));
    let mut body = serde_json::to_value(&status).expect("status serializes");
    body["phase"] = phase;
    Json(body)
}

#[derive(Debug, Deserialize)]
struct TelemetryQuery {
    run: Option<String>,
    from: Option<u64>,
    to: Option<u64>,
    var: Option<String>,
    stream: Option<String>,
}

/// The named run, else the active run, else the newest recorded one.
fn resolve_run(s: &ApiState, run: Option<String>) -> Result<String, ApiError> {
    match run {
        Some(id) if s.store.has_run(&id) => Ok(id),
        Some(id) => Err(ApiError::new(404, "unknown_run", format!("unknown run `{id}`"))),
        None => s
            .control
            .status()
            .run
            .map(|r| r.run_id)
            .or_else(|| s.store.run_ids().pop())
            .ok_or_else(|| ApiError::new(404, "unknown_run", "no runs recorded")),
    }
}

fn parse_stream(stream: Option<&str>) -> Result<Option<Stream>, ApiError> {
    stream.map(|s| s.parse::<Stream>().map_err(ApiError::bad_request)).transpose()
}

async fn get_telemetry(
    State(s): State<ApiState>,
    q: Result<Query<TelemetryQuery>, QueryRejection>,
) -> Result<Json<Value>, ApiError> {
    let Query(q) = q?;
    let variable = q
        .var
        .as_deref()
        .map(|v| v.parse::<Variable>().map_err(|e| ApiError::new(400, "unknown_variable", e.to_string())))
        .transpose()?;
    let stream = parse_stream(q.stream.as_deref())?;
    if let (Some(from), Some(to)) = (q.from, q.to) {
        if from > to {
            return Err(ApiError::bad_request(format!("from {from} is after to {to}")));
        }
    }
    blocking(move || {
        let run_id = resolve_run(&s, q.run)?;
        let points: Vec<DataPoint> = s
            .store
            .points(&run_id)?
            .into_iter()
            .filter(|p| q.from.is_none_or(|f| p.timestamp >= f))
            .filter(|p| q.to.is_none_or(|t| p.timestamp <= t))
            .filter(|p| variable.is_none_or(|v| p.variable == v))
            .filter(|p| stream.is_none_or(|st| p.stream == st))
            .collect();
        Ok(Json(json!({ "run_id": run_id, "count": points.len(), "points": points })))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct CsvQuery {
    run: Option<String>,
    stream: Option<String>,
}

async fn get_telemetry_csv(
    State(s): State<ApiState>,
    q: Result<Query<CsvQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = q?;
    let stream = parse_stream(q.stream.as_deref())?;
    blocking(move || {
        let run_id = resolve_run(&s, q.run)?;
        let csv = s.store.export_csv(&run_id, stream)?;
        let disposition = format!("attachment; filename=\"{run_id}.csv\"");
        Ok(([(header::CONTENT_TYPE, "text/csv".to_string()), (header::CONTENT_DISPOSITION, disposition)], csv)
            .into_response())
    })
    .await
}

fn summary(doc_id: &str, revision: u64, origin: Option<&str>, recipe: Option<&Recipe>) -> Value {
    json!({
        "id": doc_id,
        "revision": revision,
        "origin": origin,
        "format": recipe.map(|r| r.format()),
        "operations": recipe.map(|r| r.operations().len()),
        "duration": recipe.map(|r| r.duration()),
    })
}

async fn post_recipe(State(s): State<ApiState>, body: Bytes) -> Result<Response, ApiError> {
    let recipe = parse_recipe(&body)?;
    blocking(move || {
        let value = recipe_to_value(&recipe);
        let id = recipe.id().to_string();
        let (status, revision) = match s.store.get(&id) {
            Some(doc) if doc.kind != DocKind::Recipe => {
                return Err(ApiError::new(409, "wrong_kind", format!("`{id}` is not a recipe")));
            }
            Some(doc) if !doc.deleted && doc.body == value => (StatusCode::OK, doc.revision),
            Some(doc) => (StatusCode::OK, s.store.put(&id, DocKind::Recipe, value, Some(doc.revision))?),
            None => (StatusCode::CREATED, s.store.put(&id, DocKind::Recipe, value, None)?),
        };
        Ok((status, Json(summary(&id, revision, None, Some(&recipe)))).into_response())
    })
    .await
}

async fn list_recipes(State(s): State<ApiState>) -> Json<Value> {
    let list: Vec<Value> = s
        .store
        .list(DocKind::Recipe)
        .into_iter()
        .filter(|d| !d.deleted)
        .map(|d| {
            let recipe = serde_json::to_vec(&d.body).ok().and_then(|raw| parse_recipe(&raw).ok());
            summary(&d.id, d.revision, d.origin.as_deref(), recipe.as_ref())
        })
        .collect();
    Json(Value::Array(list))
}

fn stored_recipe(store: &Store, id: &str) -> Result<Value, ApiError> {
    match store.get(id) {
        Some(doc) if doc.kind == DocKind::Recipe && !doc.deleted => Ok(doc.body),
        _ => Err(ApiError::new(404, "unknown_recipe", format!("unknown recipe `{id}`"))),
    }
}

async fn get_recipe(State(s): State<ApiState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    stored_recipe(&s.store, &id).map(Json)
}

#[derive(Debug, Deserialize)]
struct StartRun {
    recipe_id: String,
}

async fn start_run(
    State(s): State<ApiState>,
    body: Result<Json<StartRun>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    let raw = serde_json::to_vec(&stored_recipe(&s.store, &req.recipe_id)?).expect("json");
    let recipe = parse_recipe(&raw)?;
    let run_id = blocking(move || Ok(s.control.start_run(recipe)?)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "run_id": run_id, "recipe_id": req.recipe_id }))).into_response())
}

async fn list_runs(State(s): State<ApiState>) -> Json<Value> {
    let runs: Vec<Value> = s
        .store
        .run_ids()
        .into_iter()
        .map(|id| {
            let meta = s.store.get(&format!("run:{id}")).map_or(Value::Null, |d| d.body);
            json!({ "run_id": id, "meta": meta })
        })
        .collect();
    Json(Value::Array(runs))
}

async fn abort_run(State(s): State<ApiState>) -> Result<Json<Value>, ApiError> {
    let run_id = blocking(move || Ok(s.control.abort()?)).await?;
    Ok(Json(json!({ "run_id": run_id, "phase": "aborted" })))
}

#[derive(Debug, Deserialize)]
struct Actuate {
    effect: String,
    magnitude: f64,
    #[serde(default)]
    duration_s: u64,
    #[serde(default, rename = "override")]
    override_run: bool,
}

async fn actuate(
    State(s): State<ApiState>,
    body: Result<Json<Actuate>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    let effect: Effect = req.effect.parse()?;
    let command = EffectCommand::new(effect, req.magnitude)?;
    let order = ManualOrder { command, duration_s: req.duration_s };
    let override_run = req.override_run;
    blocking(move || Ok(s.control.actuate(order, override_run)?)).await?;
    let body = json!({
        "effect": effect,
        "magnitude": req.magnitude,
        "duration_s": req.duration_s,
        "override": override_run,
    });
    Ok((StatusCode::ACCEPTED, Json(body)).into_response())
}

async fn get_config(State(s): State<ApiState>) -> Json<Value> {
    Json(serde_json::to_value(s.control.config()).expect("config serializes"))
}

async fn patch_config(
    State(s): State<ApiState>,
    body: Result<Json<Value>, JsonRejection>,
) -> Result<Json<Value>, ApiError> {
    let Json(patch) = body?;
    if !patch.is_object() {
        return Err(ApiError::bad_request("PATCH /config expects a JSON object"));
    }
    let _guard = s.patch_lock.clone().lock_owned().await;
    let next = s.control.config().patched(&patch).map_err(|e| ApiError::new(400, "invalid_config", e.0))?;
    let applied = next.clone();
    blocking(move || Ok(s.control.set_config(applied)?)).await?;
    Ok(Json(serde_json::to_value(next).expect("config serializes")))
}
