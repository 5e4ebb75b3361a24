//! HTTP/JSON API for interactive spectrum exploration. A session holds
//! an editable copy of a trained operator; clients edit eigenvalues,
//! reduce the model, undo, and request rollouts under the edited operator.

mod error;
mod session;

pub use error::ApiError;
pub use session::{history_hash, replay, Session, SessionEdit, SessionSnapshot};

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{HeaderName, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::ServeDir;

use crate::analysis::{self, Edit, Manipulation, SpectrumExport, Stability};
use crate::koopman::KoopmanModel;
use crate::metrics;
use crate::trajgen::{load_dataset, Bounce, Dataset, Pose, Scenario, Split};

pub const MAX_HORIZON: usize = 200;
pub const HISTORY_HEADER: &str = "x-history-hash";
pub const OPENAPI: &str = include_str!("../../docs/openapi.json");

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Models are `<model_dir>/<name>.json`.
    pub model_dir: PathBuf,
    /// Datasets are `<data_dir>/<scenario>.jsonl`.
    pub data_dir: PathBuf,
    /// Served at `/` when set.
    pub static_dir: Option<PathBuf>,
    /// Session histories are mirrored here and restored at startup.
    pub snapshot_dir: Option<PathBuf>,
    /// Allowed CORS origin; any origin when unset.
    pub cors_origin: Option<String>,
}

pub fn dataset_path(data_dir: &Path, scenario: Scenario) -> PathBuf {
    data_dir.join(format!("{scenario}.jsonl"))
}

pub fn model_path(model_dir: &Path, name: &str) -> PathBuf {
    model_dir.join(format!("{name}.json"))
}

pub struct AppState {
    cfg: ServiceConfig,
    models: RwLock<HashMap<String, Arc<KoopmanModel>>>,
    datasets: RwLock<HashMap<Scenario, Arc<Dataset>>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
}

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Arc<Self> {
        let state = Arc::new(Self {
            cfg,
            models: RwLock::default(),
            datasets: RwLock::default(),
            sessions: RwLock::default(),
        });
        state.restore_snapshots();
        state
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().unwrap().len()
    }

    fn model(&self, name: &str) -> Result<Arc<KoopmanModel>, ApiError> {
        let valid = !name.is_empty()
            && !name.starts_with('.')
            && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
        if !valid {
            return Err(ApiError::bad_request(format!("invalid model name `{name}`")));
        }
        if let Some(m) = self.models.read().unwrap().get(name) {
            return Ok(m.clone());
        }
        let path = model_path(&self.cfg.model_dir, name);
        if !path.is_file() {
            return Err(ApiError::not_found(format!("model `{name}`")));
        }
        let model = Arc::new(KoopmanModel::load(&path).map_err(ApiError::internal)?);
        self.models.write().unwrap().insert(name.to_string(), model.clone());
        Ok(model)
    }

    fn dataset(&self, scenario: Scenario) -> Result<Arc<Dataset>, ApiError> {
        if let Some(d) = self.datasets.read().unwrap().get(&scenario) {
            return Ok(d.clone());
        }
        let path = dataset_path(&self.cfg.data_dir, scenario);
        if !path.is_file() {
            return Err(ApiError::not_found(format!("dataset `{scenario}`")));
        }
        let data = Arc::new(load_dataset(&path).map_err(ApiError::internal)?);
        self.datasets.write().unwrap().insert(scenario, data.clone());
        Ok(data)
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions.read().unwrap().get(id).cloned().ok_or_else(|| ApiError::not_found(format!("session `{id}`")))
    }

    fn persist(&self, s: &Session) {
        let Some(dir) = &self.cfg.snapshot_dir else { return };
        let path = dir.join(format!("{}.json", s.id));
        let res = std::fs::create_dir_all(dir).and_then(|_| {
            std::fs::write(&path, serde_json::to_string(&s.snapshot()).expect("snapshot serializes"))
        });
        if let Err(e) = res {
            log::warn!("could not write session snapshot {}: {e}", path.display());
        }
    }

    fn forget(&self, id: &str) {
        if let Some(dir) = &self.cfg.snapshot_dir {
            let _ = std::fs::remove_file(dir.join(format!("{id}.json")));
        }
    }

    fn restore_snapshots(&self) {
        let Some(dir) = &self.cfg.snapshot_dir else { return };
        let Ok(entries) = std::fs::read_dir(dir) else { return };
        for entry in entries.flatten() {
            let path = entry.path();
            let restored = std::fs::read_to_string(&path)
                .map_err(|e| e.to_string())
                .and_then(|text| serde_json::from_str::<SessionSnapshot>(&text).map_err(|e| e.to_string()))
                .and_then(|snap| {
                    let base = self.model(&snap.model).map_err(|e| e.message)?;
                    let mut s = Session::new(snap.id.clone(), snap.model, base, snap.scenario);
                    for e in snap.history {
                        s.push(e).map_err(|e| e.to_string())?;
                    }
                    if s.hash() != snap.history_hash {
                        return Err("history hash mismatch".into());
                    }
                    Ok(s)
                });
            match restored {
                Ok(s) => {
                    log::info!("restored session {}", s.id);
                    self.sessions.write().unwrap().insert(s.id.clone(), Arc::new(Mutex::new(s)));
                }
                Err(e) => log::warn!("skipping session snapshot {}: {e}", path.display()),
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub model: String,
    pub history_hash: String,
    pub edits: Vec<SessionEdit>,
    /// False when the last edit used a pseudo-inverse eigenbasis.
    pub trusted: bool,
    pub stability: Stability,
    pub spectrum: SpectrumExport,
}

fn view(s: &Session) -> Result<SessionView, ApiError> {
    let spectrum = analysis::spectrum(&s.k).map_err(ApiError::from)?;
    let export = spectrum.export();
    Ok(SessionView {
        session_id: s.id.clone(),
        model: s.model_name.clone(),
        history_hash: s.hash(),
        edits: s.history.clone(),
        trusted: s.trusted,
        stability: Stability { spectral_radius: export.spectral_radius, stable: export.stable },
        spectrum: export,
    })
}

fn with_hash<T: Serialize>(hash: &str, body: T) -> Response {
    let mut resp = Json(body).into_response();
    if let Ok(v) = HeaderValue::from_str(hash) {
        resp.headers_mut().insert(HeaderName::from_static(HISTORY_HEADER), v);
    }
    resp
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload.map(|Json(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub model: String,
    #[serde(default)]
    pub scenario: Option<Scenario>,
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> Result<Response, ApiError> {
    let req = body(payload)?;
    let base = app.model(&req.model)?;
    let id = uuid::Uuid::new_v4().to_string();
    let s = Session::new(id.clone(), req.model, base, req.scenario);
    let v = view(&s)?;
    app.persist(&s);
    app.sessions.write().unwrap().insert(id, Arc::new(Mutex::new(s)));
    Ok((StatusCode::CREATED, with_hash(&v.history_hash.clone(), v)).into_response())
}

async fn get_spectrum(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let s = app.session(&id)?;
    let s = s.lock().unwrap();
    let v = view(&s)?;
    Ok(with_hash(&v.history_hash, v.spectrum))
}

async fn get_session(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let s = app.session(&id)?;
    let s = s.lock().unwrap();
    let v = view(&s)?;
    Ok(with_hash(&v.history_hash.clone(), v))
}

/// Edit request. Each polar coordinate takes at most one of an absolute
/// value, a factor, or an offset.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManipulateBody {
    pub pair: usize,
    pub r: Option<f64>,
    pub r_scale: Option<f64>,
    pub dr: Option<f64>,
    pub theta: Option<f64>,
    pub theta_scale: Option<f64>,
    pub dtheta: Option<f64>,
}

fn one_edit(name: &str, set: Option<f64>, scale: Option<f64>, shift: Option<f64>) -> Result<Option<Edit>, ApiError> {
    let edits: Vec<Edit> =
        [set.map(Edit::Set), scale.map(Edit::Scale), shift.map(Edit::Shift)].into_iter().flatten().collect();
    match edits.as_slice() {
        [] => Ok(None),
        [e] => Ok(Some(*e)),
        _ => Err(ApiError::unprocessable(format!("conflicting edits for {name}"))),
    }
}

impl ManipulateBody {
    pub fn to_manipulation(&self) -> Result<Manipulation, ApiError> {
        Ok(Manipulation {
            pair: self.pair,
            radius: one_edit("r", self.r, self.r_scale, self.dr)?,
            angle: one_edit("theta", self.theta, self.theta_scale, self.dtheta)?,
        })
    }
}

fn mutate(app: &AppState, id: &str, edit: SessionEdit) -> Result<Response, ApiError> {
    let s = app.session(id)?;
    let mut s = s.lock().unwrap();
    s.push(edit).map_err(ApiError::from)?;
    app.persist(&s);
    let v = view(&s)?;
    Ok(with_hash(&v.history_hash.clone(), v))
}

async fn manipulate(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    payload: Result<Json<ManipulateBody>, JsonRejection>,
) -> Result<Response, ApiError> {
    let m = body(payload)?.to_manipulation()?;
    mutate(&app, &id, SessionEdit::Manipulate(m))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReduceBody {
    pub k: usize,
}

async fn reduce(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    payload: Result<Json<ReduceBody>, JsonRejection>,
) -> Result<Response, ApiError> {
    let k = body(payload)?.k;
    mutate(&app, &id, SessionEdit::Reduce { k })
}

async fn undo(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let s = app.session(&id)?;
    let mut s = s.lock().unwrap();
    if !s.undo().map_err(ApiError::from)? {
        return Err(ApiError::conflict("nothing to undo".into()));
    }
    app.persist(&s);
    let v = view(&s)?;
    Ok(with_hash(&v.history_hash.clone(), v))
}

async fn delete_session(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<StatusCode, ApiError> {
    app.sessions.write().unwrap().remove(&id).ok_or_else(|| ApiError::not_found(format!("session `{id}`")))?;
    app.forget(&id);
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutBody {
    pub trajectory_index: Option<usize>,
    pub scenario: Option<Scenario>,
    pub split: Option<Split>,
    /// Chronological conditioning window of length `T_s`.
    pub initial_poses: Option<Vec<Pose>>,
    pub horizon: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutResponse {
    pub session_id: String,
    pub history_hash: String,
    pub horizon: usize,
    pub predicted: Vec<Pose>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Vec<Pose>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub visible: Option<Vec<bool>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_step_mse: Option<Vec<Option<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
}

fn check_horizon(h: usize) -> Result<usize, ApiError> {
    if h == 0 || h > MAX_HORIZON {
        return Err(ApiError::bad_request(format!("horizon must lie in 1..={MAX_HORIZON}, got {h}")));
    }
    Ok(h)
}

async fn rollout(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    payload: Result<Json<RolloutBody>, JsonRejection>,
) -> Result<Response, ApiError> {
    let req = body(payload)?;
    let session = app.session(&id)?;
    let (base, k, hash, scenario) = {
        let s = session.lock().unwrap();
        (s.base.clone(), s.k.clone(), s.hash(), s.scenario)
    };
    let ts = base.state_delays();
    let (initial, truth, horizon) = match (req.trajectory_index, req.initial_poses) {
        (Some(index), None) => {
            let scenario = req
                .scenario
                .or(scenario)
                .ok_or_else(|| ApiError::bad_request("trajectory_index needs a scenario".into()))?;
            let data = app.dataset(scenario)?;
            let split = req.split.unwrap_or(Split::Test);
            let t = data
                .split(split)
                .get(index)
                .ok_or_else(|| ApiError::unprocessable(format!("{scenario}/{split:?} has no trajectory {index}")))?;
            let cond = t.input_len;
            if cond < ts {
                return Err(ApiError::unprocessable(format!("{cond} conditioning frames but the model needs {ts}")));
            }
            let horizon = check_horizon(req.horizon.unwrap_or(t.len() - cond))?;
            let end = (cond + horizon).min(t.len());
            (t.poses[cond - ts..cond].to_vec(), Some((t.poses[cond..end].to_vec(), t.visible[cond..end].to_vec())), horizon)
        }
        (None, Some(poses)) => {
            if poses.len() != ts {
                return Err(ApiError::unprocessable(format!("expected {ts} initial poses, got {}", poses.len())));
            }
            let horizon = check_horizon(req.horizon.unwrap_or(Scenario::Circular.protocol().0))?;
            (poses, None, horizon)
        }
        _ => return Err(ApiError::bad_request("give exactly one of trajectory_index or initial_poses".into())),
    };
    let out = base.rollout(&initial, horizon, Some(&k)).map_err(ApiError::from)?;
    let mut resp = RolloutResponse {
        session_id: id,
        history_hash: hash.clone(),
        horizon,
        predicted: out.poses,
        ground_truth: None,
        visible: None,
        per_step_mse: None,
        mse: None,
    };
    if let Some((truth, visible)) = truth {
        let n = truth.len();
        let err = metrics::pose_mse(&resp.predicted[..n], &truth, &visible);
        resp.per_step_mse = Some(err.per_step);
        resp.mse = err.aggregate;
        resp.ground_truth = Some(truth);
        resp.visible = Some(visible);
    }
    Ok(with_hash(&hash, resp))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleQuery {
    pub index: usize,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleResponse {
    pub scenario: Scenario,
    pub split: Split,
    pub index: usize,
    pub seed: u64,
    pub input_len: usize,
    pub poses: Vec<Pose>,
    pub visible: Vec<bool>,
    pub bounces: Vec<Bounce>,
}

async fn dataset_sample(
    State(app): State<Arc<AppState>>,
    UrlPath(scenario): UrlPath<String>,
    query: Result<Query<SampleQuery>, QueryRejection>,
) -> Result<Json<SampleResponse>, ApiError> {
    let scenario: Scenario = scenario.parse().map_err(|_| ApiError::not_found(format!("dataset `{scenario}`")))?;
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let data = app.dataset(scenario)?;
    let split = q.split.unwrap_or(Split::Test);
    let t = data
        .split(split)
        .get(q.index)
        .ok_or_else(|| ApiError::not_found(format!("{scenario}/{split:?} trajectory {}", q.index)))?;
    Ok(Json(SampleResponse {
        scenario,
        split,
        index: q.index,
        seed: t.seed,
        input_len: t.input_len,
        poses: t.poses.clone(),
        visible: t.visible.clone(),
        bounces: t.bounces.clone(),
    }))
}

async fn list_models(State(app): State<Arc<AppState>>) -> Json<Vec<String>> {
    let mut names: Vec<String> = std::fs::read_dir(&app.cfg.model_dir)
        .map(|rd| {
            rd.flatten()
                .filter_map(|e| {
                    let p = e.path();
                    (p.extension()? == "json").then(|| p.file_stem()?.to_str().map(str::to_string)).flatten()
                })
                .collect()
        })
        .unwrap_or_default();
    names.sort();
    Json(names)
}

async fn openapi() -> Response {
    ([(axum::http::header::CONTENT_TYPE, "application/json")], OPENAPI).into_response()
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = match &state.cfg.cors_origin {
        Some(origin) => match HeaderValue::from_str(origin) {
            Ok(v) => CorsLayer::new().allow_origin(AllowOrigin::exact(v)),
            Err(_) => {
                log::warn!("ignoring invalid CORS origin `{origin}`");
                CorsLayer::new()
            }
        },
        None => CorsLayer::new().allow_origin(Any),
    }
    .allow_methods(Any)
    .allow_headers(Any)
    .expose_headers([HeaderName::from_static(HISTORY_HEADER)]);

    let mut app = Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/openapi.json", get(openapi))
        .route("/models", get(list_models))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/spectrum", get(get_spectrum))
        .route("/sessions/{id}/manipulate", post(manipulate))
        .route("/sessions/{id}/rollout", post(rollout))
        .route("/sessions/{id}/reduce", post(reduce))
        .route("/sessions/{id}/undo", post(undo))
        .route("/datasets/{scenario}/sample", get(dataset_sample));
    if let Some(dir) = &state.cfg.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app.with_state(state).layer(cors)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(cfg: ServiceConfig, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(cfg))).await
}
