//! JSON-over-HTTP session service.
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/session` | `{"rig": "name.fbr"}` or `{"mesh": {...}, "config": {...}}` |
//! | POST | `/session/{id}/command` | `{"name": ..., "params": {...}}` |
//! | GET | `/session/{id}/snapshot?view=+z` | |
//! | GET | `/session/{id}/weights?part=0&kind=rib&index=3` | |
//! | GET | `/session/{id}/log` | |
//! | POST | `/session/{id}/keyframes` | `{"time": 1.0, "loop": false}` |
//! | GET | `/session/{id}/keyframes` | |
//! | POST | `/session/{id}/keyframes/sample` | `{"time": 0.5, "apply": false}` |
//! | POST | `/session/{id}/sim/start` | `{"config": {...}, "forces": {...}, "realtime": true}` |
//! | POST | `/session/{id}/sim/step` | `{"frames": 10}` |
//! | POST | `/session/{id}/sim/stop` | |
//! | GET | `/session/{id}/sim/frames?since=0` | JSON lines |

use std::collections::HashMap;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fishbone::mesh::parse_mesh_json;
use fishbone::rig::{extract, ExtractConfig, FishboneRig};
use fishbone::rig_store::load_rig;
use fishbone::skinning::WeightCache;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::batch::{part_summaries, with_overrides};
use crate::session::{CommandError, ErrorKind, Session, SimStart, WeightKind};

pub struct AppState {
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    rig_root: PathBuf,
    cache: Option<WeightCache>,
}

impl AppState {
    pub fn new(rig_root: impl Into<PathBuf>, cache: Option<WeightCache>) -> Arc<Self> {
        Arc::new(AppState {
            sessions: Mutex::new(HashMap::new()),
            rig_root: rig_root.into(),
            cache,
        })
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError(CommandError {
                kind: ErrorKind::NotFound,
                path: None,
                message: format!("no session `{id}`"),
            }))
    }
}

pub struct ApiError(pub CommandError);

impl From<CommandError> for ApiError {
    fn from(e: CommandError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.0.kind {
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Validation => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::Conflict => StatusCode::CONFLICT,
            ErrorKind::Failed => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.0 }))).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

fn body<T: DeserializeOwned + Default>(bytes: &Bytes) -> Result<T, ApiError> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let p = e.path().to_string();
        ApiError(CommandError::validation(if p == "." { "body".into() } else { p }, e.inner().to_string()))
    })
}

/// Run session work off the async executor, holding the session lock.
async fn with_session<T: Send + 'static>(
    state: &AppState,
    id: &str,
    f: impl FnOnce(&mut Session) -> Result<T, CommandError> + Send + 'static,
) -> Result<T, ApiError> {
    let session = state.session(id)?;
    tokio::task::spawn_blocking(move || {
        let mut s = session.lock().unwrap();
        f(&mut s)
    })
    .await
    .map_err(|e| ApiError(CommandError::failed(e.to_string())))?
    .map_err(ApiError)
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/session", post(create_session))
        .route("/session/{id}/command", post(command))
        .route("/session/{id}/snapshot", get(snapshot))
        .route("/session/{id}/weights", get(weights))
        .route("/session/{id}/log", get(edit_log))
        .route("/session/{id}/keyframes", post(capture).get(keyframes))
        .route("/session/{id}/keyframes/sample", post(sample))
        .route("/session/{id}/sim/start", post(sim_start))
        .route("/session/{id}/sim/step", post(sim_step))
        .route("/session/{id}/sim/stop", post(sim_stop))
        .route("/session/{id}/sim/frames", get(sim_frames))
        .with_state(state)
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CreateSession {
    rig: Option<String>,
    mesh: Option<Value>,
    config: Option<Value>,
}

fn relative_path(root: &Path, name: &str) -> Result<PathBuf, CommandError> {
    let p = Path::new(name);
    if name.is_empty() || !p.components().all(|c| matches!(c, Component::Normal(_))) {
        return Err(CommandError::validation("rig", "rig must be a relative path inside the rig root"));
    }
    Ok(root.join(p))
}

async fn create_session(State(state): State<Arc<AppState>>, bytes: Bytes) -> ApiResult {
    let req: CreateSession = body(&bytes)?;
    let st = state.clone();
    let (rig, source): (FishboneRig, String) = tokio::task::spawn_blocking(move || -> Result<_, CommandError> {
        match (req.rig, req.mesh) {
            (Some(name), None) => {
                let path = relative_path(&st.rig_root, &name)?;
                let rig = load_rig(&path).map_err(|e| CommandError::validation("rig", e.to_string()))?;
                Ok((rig, name))
            }
            (None, Some(mesh)) => {
                let raw = parse_mesh_json(&mesh.to_string()).map_err(|e| CommandError::validation("mesh", e.to_string()))?;
                let config: ExtractConfig = with_overrides(req.config.as_ref())
                    .map_err(|e| CommandError::validation("config", format!("{e:#}")))?;
                let (rig, _) = extract(&raw, &config, st.cache.as_ref())
                    .map_err(|e| CommandError::validation("mesh", e.to_string()))?;
                Ok((rig, "inline mesh".into()))
            }
            _ => Err(CommandError::validation("body", "give exactly one of `rig` or `mesh`")),
        }
    })
    .await
    .map_err(|e| ApiError(CommandError::failed(e.to_string())))??;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let parts = part_summaries(&rig);
    let mut session = Session::new(id.clone(), source, rig);
    session.log_dir = Some(state.rig_root.join("sessions"));
    state.sessions.lock().unwrap().insert(id.clone(), Arc::new(Mutex::new(session)));
    Ok(Json(json!({ "id": id, "parts": parts })))
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CommandBody {
    name: String,
    #[serde(default)]
    params: Value,
}

async fn command(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, bytes: Bytes) -> ApiResult {
    let cmd: CommandBody = body(&bytes)?;
    let out = with_session(&state, &id, move |s| s.execute(&cmd.name, &cmd.params)).await?;
    if out.get("closed") == Some(&Value::Bool(true)) {
        state.sessions.lock().unwrap().remove(&id);
    }
    Ok(Json(out))
}

#[derive(Deserialize)]
struct ViewQuery {
    view: Option<String>,
}

async fn snapshot(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, Query(q): Query<ViewQuery>) -> ApiResult {
    with_session(&state, &id, move |s| s.snapshot(q.view.as_deref())).await.map(Json)
}

#[derive(Deserialize)]
struct WeightQuery {
    #[serde(default)]
    part: usize,
    kind: WeightKind,
    index: usize,
}

async fn weights(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, Query(q): Query<WeightQuery>) -> ApiResult {
    with_session(&state, &id, move |s| s.weight_column(q.part, q.kind, q.index)).await.map(Json)
}

async fn edit_log(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    with_session(&state, &id, |s| Ok(json!({ "source": s.source, "edit_log": s.edit_log }))).await.map(Json)
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaptureBody {
    time: f64,
    #[serde(default, rename = "loop")]
    looping: Option<bool>,
}

async fn capture(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, bytes: Bytes) -> ApiResult {
    let b: CaptureBody = body(&bytes)?;
    with_session(&state, &id, move |s| s.capture(b.time, b.looping)).await.map(Json)
}

async fn keyframes(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    with_session(&state, &id, |s| Ok(s.keyframes())).await.map(Json)
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleBody {
    time: f64,
    #[serde(default)]
    apply: bool,
}

async fn sample(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, bytes: Bytes) -> ApiResult {
    let b: SampleBody = body(&bytes)?;
    with_session(&state, &id, move |s| s.sample(b.time, b.apply)).await.map(Json)
}

async fn sim_start(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, bytes: Bytes) -> ApiResult {
    let start: SimStart = body(&bytes)?;
    let (generation, realtime, dt) = with_session(&state, &id, move |s| {
        let g = s.start_sim(start)?;
        let running = s.sim.as_ref().is_some_and(|r| r.running);
        Ok((g, running, s.frame_dt().unwrap_or(1.0 / 60.0)))
    })
    .await?;
    if realtime {
        let session = state.session(&id)?;
        tokio::spawn(tick(session, generation, dt));
    }
    Ok(Json(json!({ "started": true, "realtime": realtime, "generation": generation })))
}

/// Step one frame per frame interval until the run is stopped or replaced.
async fn tick(session: Arc<Mutex<Session>>, generation: u64, dt: f64) {
    let period = Duration::from_secs_f64(dt.max(1e-3));
    loop {
        tokio::time::sleep(period).await;
        let s = session.clone();
        let keep = tokio::task::spawn_blocking(move || {
            let mut g = s.lock().unwrap();
            if !g.ticking(generation) {
                return false;
            }
            match g.step_sim(1) {
                Ok(_) => true,
                Err(e) => {
                    log::warn!("session {}: {e}", g.id);
                    false
                }
            }
        })
        .await
        .unwrap_or(false);
        if !keep {
            break;
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StepBody {
    frames: usize,
}

impl Default for StepBody {
    fn default() -> Self {
        StepBody { frames: 1 }
    }
}

async fn sim_step(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, bytes: Bytes) -> ApiResult {
    let b: StepBody = body(&bytes)?;
    with_session(&state, &id, move |s| s.step_sim(b.frames)).await.map(Json)
}

async fn sim_stop(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    with_session(&state, &id, |s| {
        let frames = s.finish_sim();
        Ok(json!({ "stopped": frames.is_some(), "frames": frames.unwrap_or(0) }))
    })
    .await
    .map(Json)
}

#[derive(Deserialize)]
struct SinceQuery {
    #[serde(default)]
    since: usize,
}

async fn sim_frames(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<SinceQuery>,
) -> Result<Response, ApiError> {
    let lines = with_session(&state, &id, move |s| Ok(s.frames_since(q.since))).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], lines).into_response())
}

pub async fn serve(addr: std::net::SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
