//! HTTP + WebSocket session service.
//!
//! `POST /session` creates a session and returns its token; the console then
//! connects to `/ws/{token}` and exchanges [`WireMessage`]s. Commands for one
//! session run one at a time in arrival order, each tagged with the next
//! sequence number. `GET /healthz` and `GET /scene` are read-only.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::ws::rejection::WebSocketUpgradeRejection;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use icepilot_core::estimator::{LearnedEstimator, PoseEstimator};
use icepilot_core::fan::FanParams;
use icepilot_core::guidance::{GuidanceMode, GuidanceSession};
use icepilot_core::kinematics::JointState;
use icepilot_core::phantom::AnatomyScene;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::net::TcpListener;

use crate::config::EstimatorSource;
use crate::dataset::scene_for_seed;
use crate::formats::load_scene;
use crate::protocol::{handle, state_update, MessageType, StateUpdateBody, WireMessage};
use crate::{checkpoint, Config, Error};

struct Slot {
    session: GuidanceSession,
    seq: u64,
    last_active: Instant,
}

pub struct ServiceState {
    config: Config,
    scene: AnatomyScene,
    estimator: Arc<dyn PoseEstimator>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Slot>>>>,
}

impl ServiceState {
    pub fn new(
        config: Config,
        scene: AnatomyScene,
        estimator: Arc<dyn PoseEstimator>,
    ) -> Arc<Self> {
        Arc::new(Self {
            config,
            scene,
            estimator,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    /// Loads the scene and estimator named by the configuration.
    pub fn from_config(config: Config) -> Result<Arc<Self>, Error> {
        let scene = match &config.scene.path {
            Some(p) => load_scene(p)?,
            None => scene_for_seed(config.scene.seed, &config)?,
        };
        let estimator = load_estimator(&config.service.estimator, &config.fan)?;
        Ok(Self::new(config, scene, estimator))
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session table").len()
    }

    fn slot(&self, token: &str) -> Option<Arc<Mutex<Slot>>> {
        self.sessions
            .lock()
            .expect("session table")
            .get(token)
            .cloned()
    }

    fn remove(&self, token: &str) {
        self.sessions.lock().expect("session table").remove(token);
    }

    /// Drops sessions idle for longer than the configured timeout.
    pub fn reap_idle(&self, now: Instant) -> usize {
        let timeout = Duration::from_secs(self.config.service.idle_timeout_secs);
        let mut table = self.sessions.lock().expect("session table");
        let before = table.len();
        table.retain(|_, slot| match slot.try_lock() {
            Ok(s) => now.saturating_duration_since(s.last_active) <= timeout,
            // busy sessions are not idle
            Err(_) => true,
        });
        before - table.len()
    }
}

/// Builds the estimator named by `source`, checking that a checkpoint
/// matches the rendered slice size.
pub fn load_estimator(
    source: &EstimatorSource,
    fan: &FanParams,
) -> Result<Arc<dyn PoseEstimator>, Error> {
    Ok(match source {
        EstimatorSource::Oracle(o) => Arc::new(*o),
        EstimatorSource::Checkpoint { path } => {
            let (model, _) = checkpoint::load(path)?;
            if fan.width != fan.height || model.config.input_size != fan.width as usize {
                return Err(Error::Config(format!(
                    "checkpoint expects {0}x{0} slices but the fan renders {1}x{2}",
                    model.config.input_size, fan.width, fan.height
                )));
            }
            Arc::new(LearnedEstimator::new(model))
        }
    })
}

/// 128 random bits, hex encoded.
fn new_token() -> Result<String, getrandom::Error> {
    let mut bytes = [0u8; 16];
    getrandom::fill(&mut bytes)?;
    Ok(hex::encode(bytes))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub start: Option<JointState>,
    #[serde(default)]
    pub mode: Option<GuidanceMode>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCreated {
    pub token: String,
    pub session_id: String,
    pub state: StateUpdateBody,
}

fn http_error(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    (
        status,
        Json(json!({ "code": code, "message": message.into() })),
    )
        .into_response()
}

async fn healthz(State(state): State<Arc<ServiceState>>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "name": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "git": crate::cli::git_describe(),
        "sessions": state.session_count(), "estimator": state.estimator.name(),
    }))
}

async fn scene(State(state): State<Arc<ServiceState>>) -> Json<AnatomyScene> {
    Json(state.scene.clone())
}

async fn create_session(State(state): State<Arc<ServiceState>>, body: Bytes) -> Response {
    let req: CreateSession = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSession::default()
    } else {
        match serde_json::from_slice(&body) {
            Ok(r) => r,
            Err(e) => return http_error(StatusCode::BAD_REQUEST, "bad_request", e.to_string()),
        }
    };
    if state.session_count() >= state.config.service.max_sessions {
        return http_error(
            StatusCode::SERVICE_UNAVAILABLE,
            "too_many_sessions",
            "session limit reached",
        );
    }
    let token = match new_token() {
        Ok(t) => t,
        Err(e) => return http_error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    };
    let st = state.clone();
    let built = tokio::task::spawn_blocking(move || {
        let cfg = &st.config;
        let start = req.start.unwrap_or_else(|| cfg.catheter.neutral());
        cfg.catheter.check_limits(&start)?;
        let session = GuidanceSession::start(
            st.scene.clone(),
            cfg.catheter,
            start,
            st.estimator.clone(),
            cfg.fan,
            cfg.guidance,
            req.mode.unwrap_or(GuidanceMode::Interactive),
        )?;
        Ok::<_, Error>(session)
    })
    .await;
    let session = match built {
        Ok(Ok(s)) => s,
        Ok(Err(e)) => return http_error(StatusCode::BAD_REQUEST, "bad_request", e.to_string()),
        Err(e) => return http_error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    };
    let created = SessionCreated {
        token: token.clone(),
        session_id: session.id().to_string(),
        state: state_update(&session),
    };
    {
        let mut table = state.sessions.lock().expect("session table");
        if table.len() >= state.config.service.max_sessions {
            return http_error(
                StatusCode::SERVICE_UNAVAILABLE,
                "too_many_sessions",
                "session limit reached",
            );
        }
        table.insert(
            token,
            Arc::new(Mutex::new(Slot {
                session,
                seq: 0,
                last_active: Instant::now(),
            })),
        );
    }
    (StatusCode::CREATED, Json(created)).into_response()
}

async fn ws_upgrade(
    State(state): State<Arc<ServiceState>>,
    Path(token): Path<String>,
    ws: Result<WebSocketUpgrade, WebSocketUpgradeRejection>,
) -> Response {
    if state.slot(&token).is_none() {
        return http_error(
            StatusCode::NOT_FOUND,
            "unknown_session",
            "no session with this token",
        );
    }
    let ws = match ws {
        Ok(ws) => ws,
        Err(rejection) => return rejection.into_response(),
    };
    ws.on_upgrade(move |socket| run_socket(state, token, socket))
}

fn encode(msg: &WireMessage) -> Message {
    Message::Text(
        serde_json::to_string(msg)
            .expect("wire messages serialize")
            .into(),
    )
}

fn error_message(token: &str, corr: Option<String>, code: &str, message: String) -> WireMessage {
    WireMessage {
        corr,
        ..WireMessage::new(
            MessageType::Error,
            token,
            json!({ "code": code, "message": message }),
        )
    }
}

async fn run_socket(state: Arc<ServiceState>, token: String, mut socket: WebSocket) {
    while let Some(Ok(frame)) = socket.recv().await {
        let text = match frame {
            Message::Text(t) => t,
            Message::Binary(_) => {
                let m = error_message(
                    &token,
                    None,
                    "bad_request",
                    "binary frames are not supported".into(),
                );
                if socket.send(encode(&m)).await.is_err() {
                    return;
                }
                continue;
            }
            Message::Close(_) => return,
            _ => continue,
        };
        let msg: WireMessage = match serde_json::from_str(&text) {
            Ok(m) => m,
            Err(e) => {
                let corr = serde_json::from_str::<Value>(&text)
                    .ok()
                    .and_then(|v| v.get("corr").and_then(Value::as_str).map(str::to_string));
                if socket
                    .send(encode(&error_message(
                        &token,
                        corr,
                        "bad_request",
                        e.to_string(),
                    )))
                    .await
                    .is_err()
                {
                    return;
                }
                continue;
            }
        };
        if msg.token != token {
            let m = error_message(
                &token,
                msg.corr,
                "bad_token",
                "message token does not match the connection".into(),
            );
            if socket.send(encode(&m)).await.is_err() {
                return;
            }
            continue;
        }
        let Some(slot) = state.slot(&token) else {
            let end = WireMessage {
                corr: msg.corr,
                ..WireMessage::new(
                    MessageType::SessionEnd,
                    &token,
                    json!({ "reason": "session expired" }),
                )
            };
            let _ = socket.send(encode(&end)).await;
            let _ = socket.send(Message::Close(None)).await;
            return;
        };
        let job = tokio::task::spawn_blocking(move || {
            let mut s = slot.lock().expect("session slot");
            s.seq += 1;
            let handled = handle(&mut s.session, msg.kind, &msg.body);
            s.last_active = Instant::now();
            (s.seq, msg.corr, handled)
        });
        let Ok((seq, corr, handled)) = job.await else {
            let m = error_message(&token, None, "internal", "command handler panicked".into());
            let _ = socket.send(encode(&m)).await;
            return;
        };
        if handled.end {
            state.remove(&token);
        }
        for (kind, body) in handled.replies {
            let reply = WireMessage {
                kind,
                token: token.clone(),
                corr: corr.clone(),
                seq: Some(seq),
                body,
            };
            if socket.send(encode(&reply)).await.is_err() {
                return;
            }
        }
        if handled.end {
            let _ = socket.send(Message::Close(None)).await;
            return;
        }
    }
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/scene", get(scene))
        .route("/session", post(create_session))
        .route("/ws/{token}", get(ws_upgrade))
        .with_state(state)
}

/// Serves until `shutdown` resolves, reaping idle sessions in the background.
pub async fn serve(
    listener: TcpListener,
    state: Arc<ServiceState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let timeout = state.config.service.idle_timeout_secs;
    let reaper = (timeout > 0).then(|| {
        let st = state.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_secs((timeout / 4).clamp(1, 60)));
            loop {
                tick.tick().await;
                st.reap_idle(Instant::now());
            }
        })
    });
    let result = axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await;
    if let Some(r) = reaper {
        r.abort();
    }
    result
}
