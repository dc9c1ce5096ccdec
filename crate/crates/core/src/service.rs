//! HTTP session API that puts a human in the oracle seat.
//!
//! | method | path | body / result |
//! |---|---|---|
//! | `GET` | `/health` | `{status: "ok"}` |
//! | `POST` | `/sessions` | config as JSON → `{id, phase}` |
//! | `GET` | `/sessions/{id}` | `{id, phase, round, labeled, pending, classes}` |
//! | `GET` | `/sessions/{id}/queries` | `[{instance_id, pair_id, shape, values, score, label}]` |
//! | `POST` | `/sessions/{id}/labels` | `{labels: {"<id>": class}}` → `{phase}` |
//! | `GET` | `/sessions/{id}/metrics` | metrics rows, one per round |
//!
//! Errors are `{error, detail}`. Each session serializes its mutations;
//! training after the last label runs on a blocking thread while reads keep
//! being served. Sessions are snapshotted as JSON after every phase change
//! and reloaded on start.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use crate::config::Config;
use crate::engine::{Engine, Proposal, RoundMetrics};
use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Training,
    AwaitingLabels,
    Finished,
    Failed,
}

/// One human-in-the-loop run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub phase: Phase,
    pub engine: Engine,
    pub pending: Option<Proposal>,
    /// Labels received so far for `pending`.
    pub submitted: BTreeMap<usize, usize>,
    pub error: Option<String>,
}

impl Session {
    /// Opens the next round's queries, or finishes.
    fn advance(&mut self) -> crate::Result<()> {
        self.submitted.clear();
        self.pending = self.engine.propose()?;
        self.phase = if self.pending.is_some() {
            Phase::AwaitingLabels
        } else {
            Phase::Finished
        };
        Ok(())
    }

    /// Completes the pending round with the submitted labels and advances.
    fn finish_round(&mut self) -> crate::Result<()> {
        let p = self.pending.take().ok_or_else(|| Error::contract("no pending round"))?;
        self.engine.complete(&p, &self.submitted)?;
        self.advance()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    error: &'static str,
    detail: String,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, detail: impl Into<String>) -> Self {
        Self {
            status,
            error,
            detail: detail.into(),
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no session {id}"))
    }

    fn phase(phase: Phase) -> Self {
        Self::new(StatusCode::CONFLICT, "phase", format!("session is {phase:?}"))
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, error) = match &e {
            Error::Config(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_config"),
            Error::Io { .. } | Error::Format { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "dataset"),
            Error::Contract(_) => (StatusCode::UNPROCESSABLE_ENTITY, "contract"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, error, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.error, "detail": self.detail });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Shared server state.
#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<Mutex<HashMap<String, Arc<Mutex<Session>>>>>,
    next_id: Arc<Mutex<u64>>,
    snapshot_dir: Option<PathBuf>,
}

fn snapshot_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("session-{id}.json"))
}

fn write_snapshot(dir: &Path, s: &Session) -> crate::Result<()> {
    let path = snapshot_path(dir, &s.id);
    let tmp = path.with_extension("json.tmp");
    let text = serde_json::to_vec(s).map_err(|e| Error::contract(e.to_string()))?;
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
}

impl AppState {
    /// State backed by `snapshot_dir`; existing snapshots are reloaded and
    /// sessions caught mid-training resume training.
    pub fn open(snapshot_dir: Option<PathBuf>) -> crate::Result<Self> {
        let state = AppState {
            snapshot_dir: snapshot_dir.clone(),
            ..Default::default()
        };
        let Some(dir) = snapshot_dir else {
            return Ok(state);
        };
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut sessions = HashMap::new();
        let mut max_id = 0;
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
                let s: Session = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
                    path: path.clone(),
                    offset: 0,
                    detail: e.to_string(),
                })?;
                max_id = max_id.max(s.id.parse::<u64>().unwrap_or(0));
                sessions.insert(s.id.clone(), Arc::new(Mutex::new(s)));
            }
        }
        let state = AppState {
            sessions: Arc::new(Mutex::new(sessions)),
            next_id: Arc::new(Mutex::new(max_id + 1)),
            snapshot_dir: Some(dir),
        };
        Ok(state)
    }

    /// Restarts training for sessions that were snapshotted mid-training.
    pub async fn resume_training(&self) {
        let all: Vec<Arc<Mutex<Session>>> = self.sessions.lock().await.values().cloned().collect();
        for s in all {
            if s.lock().await.phase == Phase::Training {
                self.spawn_training(s);
            }
        }
    }

    async fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .lock()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    fn snapshot(&self, s: &Session) -> crate::Result<()> {
        match &self.snapshot_dir {
            Some(dir) => write_snapshot(dir, s),
            None => Ok(()),
        }
    }

    fn spawn_training(&self, handle: Arc<Mutex<Session>>) {
        let state = self.clone();
        tokio::spawn(async move {
            let work = handle.lock().await.clone();
            let result = tokio::task::spawn_blocking(move || {
                let mut s = work;
                s.finish_round().map(|_| s)
            })
            .await;
            let mut guard = handle.lock().await;
            match result {
                Ok(Ok(done)) => *guard = done,
                Ok(Err(e)) => {
                    guard.phase = Phase::Failed;
                    guard.error = Some(e.to_string());
                }
                Err(e) => {
                    guard.phase = Phase::Failed;
                    guard.error = Some(format!("training task failed: {e}"));
                }
            }
            if let Err(e) = state.snapshot(&guard) {
                tracing::error!(session = %guard.id, "snapshot failed: {e}");
            }
        });
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct Created {
    pub id: String,
    pub phase: Phase,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct Status {
    pub id: String,
    pub phase: Phase,
    pub round: usize,
    pub labeled: usize,
    pub pending: usize,
    pub classes: usize,
    pub error: Option<String>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct QueryView {
    pub instance_id: usize,
    pub pair_id: Option<usize>,
    pub shape: Option<[usize; 2]>,
    pub values: Vec<f64>,
    pub score: f64,
    /// Label already submitted in this round, if any.
    pub label: Option<usize>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct LabelRequest {
    pub labels: BTreeMap<String, usize>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct PhaseReply {
    pub phase: Phase,
}

/// CSV-equivalent metrics row.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: usize,
    pub labeled: usize,
    pub test_acc: f64,
    pub mean_virtual_entropy: Option<f64>,
    pub max_virtual_entropy: Option<f64>,
    pub mean_tau: Option<f64>,
    pub strategy: String,
    pub seed: u64,
    pub wall_ms: u64,
}

impl From<&RoundMetrics> for MetricsRow {
    fn from(m: &RoundMetrics) -> Self {
        Self {
            round: m.round,
            labeled: m.labeled,
            test_acc: m.test_acc,
            mean_virtual_entropy: m.mean_virtual_entropy,
            max_virtual_entropy: m.max_virtual_entropy,
            mean_tau: m.mean_tau,
            strategy: m.strategy.clone(),
            seed: m.seed,
            wall_ms: m.wall_ms,
        }
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn create_session(State(state): State<AppState>, body: axum::body::Bytes) -> Result<(StatusCode, Json<Created>), ApiError> {
    let mut config: Config = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", e.to_string()))?;
    config.resolve_paths(Path::new("."));
    config.validate()?;
    let seed = config.run.seeds[0];
    let id = {
        let mut n = state.next_id.lock().await;
        *n = (*n).max(1);
        let id = n.to_string();
        *n += 1;
        id
    };
    let sid = id.clone();
    let session = tokio::task::spawn_blocking(move || -> crate::Result<Session> {
        let dataset = config.load_dataset()?;
        let engine = Engine::new(&config, dataset, seed)?;
        let mut s = Session {
            id: sid,
            phase: Phase::Training,
            engine,
            pending: None,
            submitted: BTreeMap::new(),
            error: None,
        };
        s.advance()?;
        Ok(s)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    state.snapshot(&session)?;
    let phase = session.phase;
    state
        .sessions
        .lock()
        .await
        .insert(id.clone(), Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(Created { id, phase })))
}

async fn session_status(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Status> {
    let h = state.get(&id).await?;
    let s = h.lock().await;
    Ok(Json(Status {
        id: s.id.clone(),
        phase: s.phase,
        round: s.engine.round(),
        labeled: s.engine.pool().labeled().len(),
        pending: s.pending.as_ref().map_or(0, |p| p.queries.len()),
        classes: s.engine.pool().classes(),
        error: s.error.clone(),
    }))
}

async fn queries(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Vec<QueryView>> {
    let h = state.get(&id).await?;
    let s = h.lock().await;
    let (Phase::AwaitingLabels, Some(p)) = (s.phase, &s.pending) else {
        return Err(ApiError::phase(s.phase));
    };
    let pool = s.engine.pool();
    let shape = pool.dataset().image_shape().map(|sh| [sh.height, sh.width]);
    Ok(Json(
        p.queries
            .iter()
            .map(|q| QueryView {
                instance_id: q.instance_id,
                pair_id: q.pair_id,
                shape,
                values: pool.features(q.instance_id).to_vec(),
                score: q.score,
                label: s.submitted.get(&q.instance_id).copied(),
            })
            .collect(),
    ))
}

async fn submit_labels(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: axum::body::Bytes,
) -> ApiResult<PhaseReply> {
    let req: LabelRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "bad_request", e.to_string()))?;
    let h = state.get(&id).await?;
    let mut s = h.lock().await;
    let (Phase::AwaitingLabels, Some(p)) = (s.phase, &s.pending) else {
        return Err(ApiError::phase(s.phase));
    };
    let pending = p.ids();
    let classes = s.engine.pool().classes();
    let mut parsed = BTreeMap::new();
    for (k, &y) in &req.labels {
        let iid: usize = k
            .parse()
            .map_err(|_| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "bad_request", format!("bad instance id {k:?}")))?;
        if !pending.contains(&iid) {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "not_pending",
                format!("instance {iid} is not pending"),
            ));
        }
        if s.submitted.contains_key(&iid) {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "conflict",
                format!("instance {iid} already labeled"),
            ));
        }
        if y >= classes {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "bad_label",
                format!("class {y} outside 0..{classes}"),
            ));
        }
        if parsed.insert(iid, y).is_some() {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "bad_request",
                format!("instance {iid} appears twice"),
            ));
        }
    }
    s.submitted.extend(parsed);
    if s.submitted.len() == pending.len() {
        s.phase = Phase::Training;
        state.snapshot(&s)?;
        let phase = s.phase;
        drop(s);
        state.spawn_training(h);
        return Ok(Json(PhaseReply { phase }));
    }
    state.snapshot(&s)?;
    Ok(Json(PhaseReply { phase: s.phase }))
}

async fn metrics(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Vec<MetricsRow>> {
    let h = state.get(&id).await?;
    let s = h.lock().await;
    Ok(Json(s.engine.metrics().iter().map(MetricsRow::from).collect()))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_status))
        .route("/sessions/{id}/queries", get(queries))
        .route("/sessions/{id}/labels", post(submit_labels))
        .route("/sessions/{id}/metrics", get(metrics))
        .with_state(state)
}

/// Binds `addr`, failing cleanly when it is taken.
pub async fn bind(addr: &str) -> crate::Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(PathBuf::from(addr), e))
}

/// Serves on an already-bound listener until `shutdown` resolves.
pub async fn serve_on(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> crate::Result<()> {
    state.resume_training().await;
    let addr: SocketAddr = listener.local_addr().map_err(|e| Error::io("listener", e))?;
    tracing::info!(%addr, "serving");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| Error::io(addr.to_string(), e))
}

/// Runs the service from a config until Ctrl-C.
pub async fn serve(config: &Config) -> crate::Result<()> {
    let state = AppState::open(config.service.snapshot_dir.clone())?;
    let listener = bind(&config.service.bind).await?;
    serve_on(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}
