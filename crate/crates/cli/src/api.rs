//! HTTP/JSON API under `/api`.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use neuroscope_core::{project_node, Bundle};
use parking_lot::{Mutex, RwLock};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::ApiError;
use crate::format::round_floats;
use crate::jobs::{config_hash, sample_hash, ConfigRequest, JobKey, Jobs, Submission};
use crate::session::{self, Session};

/// Shared server state. Reads take the session lock shared; subset, pin and
/// sample mutations take it exclusively. Projection jobs run on blocking
/// threads without holding either lock.
pub struct App {
    pub bundle: Arc<Bundle>,
    pub session: RwLock<Session>,
    pub jobs: Mutex<Jobs>,
}

impl App {
    pub fn new(bundle: Bundle) -> Result<Arc<Self>, ApiError> {
        let session = Session::new(&bundle)?;
        Ok(Arc::new(App {
            bundle: Arc::new(bundle),
            session: RwLock::new(session),
            jobs: Mutex::new(Jobs::default()),
        }))
    }
}

type Shared = State<Arc<App>>;
type ApiResult = Result<Response, ApiError>;

fn ok(mut v: Value) -> ApiResult {
    round_floats(&mut v);
    Ok(Json(v).into_response())
}

fn with_status(status: StatusCode, mut v: Value) -> ApiResult {
    round_floats(&mut v);
    Ok((status, Json(v)).into_response())
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let body: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { body };
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("request body: {e}")))
}

fn parse_index(s: &str) -> Result<usize, ApiError> {
    s.parse()
        .map_err(|_| ApiError::bad_request(format!("{s:?} is not an instance index")))
}

pub fn router(app: Arc<App>) -> Router {
    let api = Router::new()
        .route("/graph", get(graph))
        .route("/nodes", get(nodes))
        .route("/nodes/{id}/matrix", get(matrix))
        .route("/nodes/{id}/instance_row/{index}", get(instance_row))
        .route("/nodes/{id}/projection", axum::routing::post(start_projection))
        .route("/projections/{job_id}", get(projection_status).delete(cancel_projection))
        .route("/subsets", get(list_subsets).post(create_subset))
        .route("/subsets/{id}", get(get_subset).delete(delete_subset))
        .route("/subsets/{id}/members", get(subset_members))
        .route("/panel", get(panel))
        .route("/instances/{index}", get(instance))
        .route("/pins", get(list_pins).post(add_pin).delete(remove_pin))
        .route("/sample", get(get_sample).post(resample));
    Router::new()
        .nest("/api", api)
        .fallback(|| async { ApiError::not_found("NotFound", "no such endpoint") })
        .with_state(app)
}

async fn graph(State(app): Shared) -> ApiResult {
    ok(session::graph_json(&app.bundle))
}

async fn nodes(State(app): Shared) -> ApiResult {
    ok(session::nodes_json(&app.bundle))
}

async fn matrix(
    State(app): Shared,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let v = app
        .session
        .read()
        .matrix_json(&app.bundle, &id, q.get("sort_by").map(String::as_str))?;
    ok(v)
}

async fn instance_row(State(app): Shared, Path((id, index)): Path<(String, String)>) -> ApiResult {
    ok(session::instance_row_json(&app.bundle, &id, parse_index(&index)?)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WrappedConfig {
    config: ConfigRequest,
}

async fn start_projection(State(app): Shared, Path(id): Path<String>, body: Bytes) -> ApiResult {
    // Accept both `{"config": {...}}` and the bare config object.
    let request: ConfigRequest = match parse_body::<WrappedConfig>(&body) {
        Ok(w) => w.config,
        Err(_) => parse_body(&body)?,
    };
    let cfg = request.build()?;
    app.bundle.matrix(&id)?;
    let sample = app.session.read().sample.clone();
    cfg.check_feasible(sample.len())?;
    let key = JobKey {
        node: id.clone(),
        sample_hash: sample_hash(&sample),
        config_hash: config_hash(&cfg),
    };
    let submission = app.jobs.lock().submit(key);
    let job_id = match submission {
        Submission::Existing(job_id) => job_id,
        Submission::Start { job_id, cancel } => {
            let app = Arc::clone(&app);
            let jid = job_id.clone();
            tokio::task::spawn_blocking(move || {
                let outcome = project_node(&app.bundle, &id, &sample, &cfg, &cancel);
                app.jobs.lock().finish(&jid, &cancel, outcome);
            });
            job_id
        }
    };
    let status = app.jobs.lock().status_json(&job_id)?;
    with_status(StatusCode::ACCEPTED, json!({ "job_id": job_id, "status": status["status"] }))
}

async fn projection_status(State(app): Shared, Path(job_id): Path<String>) -> ApiResult {
    let v = app.jobs.lock().status_json(&job_id)?;
    ok(v)
}

async fn cancel_projection(State(app): Shared, Path(job_id): Path<String>) -> ApiResult {
    let mut jobs = app.jobs.lock();
    jobs.cancel(&job_id);
    let v = jobs.status_json(&job_id)?;
    ok(v)
}

async fn list_subsets(State(app): Shared) -> ApiResult {
    ok(app.session.read().subsets_json())
}

async fn get_subset(State(app): Shared, Path(id): Path<String>) -> ApiResult {
    let s = app.session.read();
    let def = s
        .registry
        .get(&id)
        .ok_or_else(|| ApiError::from(neuroscope_core::SubsetError::UnknownSubset(id.clone())))?;
    ok(session::subset_json(def, s.registry.members(&id)?.len()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewSubset {
    name: Option<String>,
    predicate: String,
}

async fn create_subset(State(app): Shared, body: Bytes) -> ApiResult {
    let req: NewSubset = parse_body(&body)?;
    let mut s = app.session.write();
    let name = req.name.unwrap_or_else(|| req.predicate.clone());
    let def = s.registry.add_user_defined(&name, &req.predicate, &app.bundle)?.clone();
    let count = s.registry.members(&def.subset_id)?.len();
    let row = s.registry.membership().position(&def.subset_id).expect("just added");
    let mut v = session::subset_json(&def, count);
    v["row"] = row.into();
    with_status(StatusCode::CREATED, v)
}

async fn delete_subset(State(app): Shared, Path(id): Path<String>) -> ApiResult {
    let mut s = app.session.write();
    let count = s.registry.members(&id)?.len();
    let def = s.registry.remove(&id, &app.bundle)?;
    ok(session::subset_json(&def, count))
}

async fn subset_members(State(app): Shared, Path(id): Path<String>) -> ApiResult {
    ok(json!(app.session.read().registry.members(&id)?))
}

async fn panel(State(app): Shared) -> ApiResult {
    let v = app.session.read().panel_json(&app.bundle)?;
    ok(v)
}

async fn instance(State(app): Shared, Path(index): Path<String>) -> ApiResult {
    ok(session::instance_json(&app.bundle, parse_index(&index)?)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PinRequest {
    node: String,
    instance: usize,
}

async fn list_pins(State(app): Shared) -> ApiResult {
    ok(json!(app.session.read().pins))
}

async fn add_pin(State(app): Shared, body: Bytes) -> ApiResult {
    let req: PinRequest = parse_body(&body)?;
    let mut s = app.session.write();
    s.pin(&app.bundle, &req.node, req.instance)?;
    ok(s.pins_json(&req.node))
}

async fn remove_pin(State(app): Shared, body: Bytes) -> ApiResult {
    let req: PinRequest = parse_body(&body)?;
    let mut s = app.session.write();
    s.unpin(&app.bundle, &req.node, req.instance)?;
    ok(s.pins_json(&req.node))
}

async fn get_sample(State(app): Shared) -> ApiResult {
    ok(app.session.read().sample_json())
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SampleRequest {
    budget: Option<usize>,
    pinned: Option<Vec<String>>,
    seed: Option<u64>,
}

async fn resample(State(app): Shared, body: Bytes) -> ApiResult {
    let req: SampleRequest = parse_body(&body)?;
    let mut s = app.session.write();
    s.resample(&app.bundle, req.budget, req.pinned, req.seed)?;
    ok(s.sample_json())
}
