//! Session API over HTTP and WebSocket: live simulation, malfunction
//! injection, diagnosis and planning on snapshots, and procedure adoption.
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/sessions` | `{config?, clock?}` |
//! | GET | `/sessions/{id}` | |
//! | DELETE | `/sessions/{id}` | |
//! | POST | `/sessions/{id}/malfunction` | scenario |
//! | POST | `/sessions/{id}/plan` | |
//! | POST | `/sessions/{id}/procedure` | `{schedule, abort?}` |
//! | POST | `/sessions/{id}/clock` | `{mode: "paused"}` or `{mode: "realtime", speed}` |
//! | POST | `/sessions/{id}/advance` | `{minutes}` |
//! | GET | `/sessions/{id}/log` | |
//! | GET (WS) | `/sessions/{id}/stream` | frames `{t, sensors, reward_cum}` |

mod session;

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use procrl_core::envgym::EnvConfig;
use procrl_core::planner::{parse_rules, InfluenceGraph, PlannerError, MAL03_RULES};
use procrl_core::ppo::{Checkpoint, GreedyPolicy};
use procrl_core::scenario::MalfunctionScenario;
use procrl_harness::{EventLog, Frame, HarnessError};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{broadcast, watch, Mutex};

pub use session::{ClockMode, PlanResponse, SessionCore, SessionView, CONTROLLED_VARIABLE};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session {0}")]
    UnknownSession(u64),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

impl ServiceError {
    fn status(&self) -> StatusCode {
        match self {
            Self::UnknownSession(_) => StatusCode::NOT_FOUND,
            Self::BadRequest(_) => StatusCode::BAD_REQUEST,
            Self::Config(_) => StatusCode::INTERNAL_SERVER_ERROR,
            Self::Planner(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Self::Harness(HarnessError::Procedure(_))
            | Self::Harness(HarnessError::Scenario(_))
            | Self::Harness(HarnessError::InvalidConfig(_))
            | Self::Harness(HarnessError::Plant(procrl_core::plantsim::PlantError::InvalidConfig(_))) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            Self::Harness(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

/// Fixed for the lifetime of the server.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub env: EnvConfig,
    pub rules: InfluenceGraph,
    pub policy: Option<GreedyPolicy>,
}

impl ServiceConfig {
    /// Built-in MAL03 knowledge base, no policy.
    pub fn builtin() -> Self {
        Self {
            env: EnvConfig::default(),
            rules: parse_rules(MAL03_RULES).expect("built-in rules parse"),
            policy: None,
        }
    }

    pub fn with_rules_file(mut self, path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("rules file {}: {e}", path.display())))?;
        self.rules = parse_rules(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        Ok(self)
    }

    pub fn with_checkpoint(mut self, path: &Path) -> Result<Self, ServiceError> {
        let ck = Checkpoint::load(path).map_err(|e| ServiceError::Config(e.to_string()))?;
        self.policy = Some(ck.policy().map_err(|e| ServiceError::Config(e.to_string()))?);
        Ok(self)
    }
}

struct SessionHandle {
    core: Arc<Mutex<SessionCore>>,
    frames: broadcast::Sender<Frame>,
    clock: watch::Sender<ClockMode>,
}

#[derive(Clone)]
pub struct AppState {
    config: Arc<ServiceConfig>,
    sessions: Arc<std::sync::Mutex<HashMap<u64, Arc<SessionHandle>>>>,
    next_id: Arc<AtomicU64>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self {
            config: Arc::new(config),
            sessions: Arc::default(),
            next_id: Arc::new(AtomicU64::new(1)),
        }
    }

    fn session(&self, id: u64) -> Result<Arc<SessionHandle>, ServiceError> {
        self.sessions
            .lock()
            .expect("session map poisoned")
            .get(&id)
            .cloned()
            .ok_or(ServiceError::UnknownSession(id))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/malfunction", post(inject_malfunction))
        .route("/sessions/{id}/plan", post(request_plan))
        .route("/sessions/{id}/procedure", post(apply_procedure))
        .route("/sessions/{id}/clock", post(set_clock))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/log", get(event_log))
        .route("/sessions/{id}/stream", get(stream))
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, config: ServiceConfig) -> std::io::Result<()> {
    axum::serve(listener, router(AppState::new(config))).await
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct CreateRequest {
    pub config: Option<EnvConfig>,
    pub clock: Option<ClockMode>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Ack {
    pub ok: bool,
    pub t: f64,
}

async fn create_session(
    State(state): State<AppState>,
    body: Option<Json<CreateRequest>>,
) -> Result<(StatusCode, Json<SessionView>), ServiceError> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let id = state.next_id.fetch_add(1, Ordering::Relaxed);
    let env = req.config.unwrap_or_else(|| state.config.env.clone());
    let core = SessionCore::new(id, env, req.clock.unwrap_or_default())?;
    let view = core.view();
    let (frames, _) = broadcast::channel(1024);
    let (clock, clock_rx) = watch::channel(core.clock());
    let handle = Arc::new(SessionHandle {
        core: Arc::new(Mutex::new(core)),
        frames: frames.clone(),
        clock,
    });
    tokio::spawn(run_clock(handle.core.clone(), frames, clock_rx));
    state.sessions.lock().expect("session map poisoned").insert(id, handle);
    Ok((StatusCode::CREATED, Json(view)))
}

/// Advances the session one simulated minute per `60 / speed` wall seconds.
/// Ends when the session is deleted.
async fn run_clock(core: Arc<Mutex<SessionCore>>, frames: broadcast::Sender<Frame>, mut clock: watch::Receiver<ClockMode>) {
    loop {
        let mode = *clock.borrow_and_update();
        match mode {
            ClockMode::Paused => {
                if clock.changed().await.is_err() {
                    return;
                }
            }
            ClockMode::Realtime { speed } => {
                let mut ticker = tokio::time::interval(Duration::from_secs_f64(60.0 / speed));
                ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
                ticker.tick().await;
                loop {
                    tokio::select! {
                        _ = ticker.tick() => {
                            let frame = core.lock().await.tick();
                            match frame {
                                Ok(f) => { let _ = frames.send(f); }
                                Err(_) => return,
                            }
                        }
                        changed = clock.changed() => {
                            if changed.is_err() {
                                return;
                            }
                            break;
                        }
                    }
                }
            }
        }
    }
}

async fn get_session(State(state): State<AppState>, UrlPath(id): UrlPath<u64>) -> Result<Json<SessionView>, ServiceError> {
    let s = state.session(id)?;
    let view = s.core.lock().await.view();
    Ok(Json(view))
}

async fn delete_session(State(state): State<AppState>, UrlPath(id): UrlPath<u64>) -> Result<StatusCode, ServiceError> {
    state
        .sessions
        .lock()
        .expect("session map poisoned")
        .remove(&id)
        .ok_or(ServiceError::UnknownSession(id))?;
    Ok(StatusCode::NO_CONTENT)
}

async fn inject_malfunction(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<u64>,
    Json(scenario): Json<MalfunctionScenario>,
) -> Result<Json<Ack>, ServiceError> {
    let s = state.session(id)?;
    let mut core = s.core.lock().await;
    core.inject(scenario)?;
    Ok(Json(Ack { ok: true, t: core.live().t() }))
}

async fn request_plan(State(state): State<AppState>, UrlPath(id): UrlPath<u64>) -> Result<Json<PlanResponse>, ServiceError> {
    let s = state.session(id)?;
    let mut core = s.core.lock().await;
    let response = core.request_plan(&state.config.rules, state.config.policy.as_ref())?;
    Ok(Json(response))
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ProcedureRequest {
    pub schedule: Vec<f64>,
    /// Drop the active procedure and return to the normal setpoint.
    pub abort: bool,
}

async fn apply_procedure(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<u64>,
    Json(req): Json<ProcedureRequest>,
) -> Result<Json<Ack>, ServiceError> {
    let s = state.session(id)?;
    let mut core = s.core.lock().await;
    if req.abort {
        core.abort_procedure()?;
    } else {
        core.apply_procedure(req.schedule)?;
    }
    Ok(Json(Ack { ok: true, t: core.live().t() }))
}

async fn set_clock(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<u64>,
    Json(mode): Json<ClockMode>,
) -> Result<Json<SessionView>, ServiceError> {
    let s = state.session(id)?;
    let mut core = s.core.lock().await;
    core.set_clock(mode)?;
    s.clock.send_replace(core.clock());
    Ok(Json(core.view()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AdvanceRequest {
    pub minutes: usize,
}

/// Steps a session by hand, normally while paused. Frames are broadcast as
/// if the clock had produced them.
async fn advance(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<u64>,
    Json(req): Json<AdvanceRequest>,
) -> Result<Json<Vec<Frame>>, ServiceError> {
    if req.minutes > 24 * 60 {
        return Err(ServiceError::BadRequest("at most one simulated day per request".into()));
    }
    let s = state.session(id)?;
    let mut core = s.core.lock().await;
    let mut out = Vec::with_capacity(req.minutes);
    for _ in 0..req.minutes {
        let f = core.tick()?;
        let _ = s.frames.send(f);
        out.push(f);
    }
    Ok(Json(out))
}

async fn event_log(State(state): State<AppState>, UrlPath(id): UrlPath<u64>) -> Result<Json<EventLog>, ServiceError> {
    let s = state.session(id)?;
    let log = s.core.lock().await.event_log();
    Ok(Json(log))
}

async fn stream(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<u64>,
    ws: WebSocketUpgrade,
) -> Result<Response, ServiceError> {
    let s = state.session(id)?;
    let rx = s.frames.subscribe();
    drop(s);
    Ok(ws.on_upgrade(move |socket| forward_frames(socket, rx)))
}

async fn forward_frames(mut socket: WebSocket, mut rx: broadcast::Receiver<Frame>) {
    loop {
        tokio::select! {
            frame = rx.recv() => match frame {
                Ok(f) => {
                    let text = serde_json::to_string(&f).expect("frames serialize");
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        return;
                    }
                }
                // Lagging behind or torn down: close rather than skip frames.
                Err(_) => {
                    let _ = socket.send(Message::Close(None)).await;
                    return;
                }
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
