//! HTTP chat service. Sessions live in memory, each behind its own async
//! mutex so requests within a session are handled in arrival order while
//! different sessions proceed in parallel.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex as StdMutex, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;
use tower_http::cors::CorsLayer;

use crate::engine::{Engine, Reply, ReplySettings, Turn};

#[derive(Debug, Clone, Serialize)]
pub struct SessionView {
    pub session_id: String,
    pub target_speaker: String,
    /// Milliseconds since the Unix epoch.
    pub created_at: i64,
}

#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub target_speaker: String,
    pub created_at: i64,
    pub history: VecDeque<Turn>,
    pub replies: u64,
}

struct Slot {
    last_used: StdMutex<Instant>,
    session: Mutex<Session>,
}

impl Slot {
    fn expired(&self, ttl: Duration, now: Instant) -> bool {
        now.duration_since(*self.last_used.lock().unwrap()) >= ttl
    }

    fn touch(&self) {
        *self.last_used.lock().unwrap() = Instant::now();
    }
}

/// Session table with lazy TTL eviction: expired sessions are dropped
/// when looked up or when a new session is created.
pub struct SessionStore {
    slots: RwLock<HashMap<String, Arc<Slot>>>,
    ttl: Duration,
}

impl SessionStore {
    pub fn new(ttl: Duration) -> Self {
        Self {
            slots: RwLock::new(HashMap::new()),
            ttl,
        }
    }

    fn create(&self, target_speaker: String) -> SessionView {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let created_at = now_millis();
        let slot = Arc::new(Slot {
            last_used: StdMutex::new(Instant::now()),
            session: Mutex::new(Session {
                id: id.clone(),
                target_speaker: target_speaker.clone(),
                created_at,
                history: VecDeque::new(),
                replies: 0,
            }),
        });
        let mut slots = self.slots.write().unwrap();
        let now = Instant::now();
        slots.retain(|_, s| !s.expired(self.ttl, now));
        slots.insert(id.clone(), slot);
        SessionView {
            session_id: id,
            target_speaker,
            created_at,
        }
    }

    fn get(&self, id: &str) -> Option<Arc<Slot>> {
        let slot = self.slots.read().unwrap().get(id).cloned()?;
        if slot.expired(self.ttl, Instant::now()) {
            self.slots.write().unwrap().remove(id);
            return None;
        }
        slot.touch();
        Some(slot)
    }

    fn remove(&self, id: &str) -> bool {
        self.slots.write().unwrap().remove(id).is_some()
    }

    pub fn len(&self) -> usize {
        self.slots.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct AppState {
    pub engine: Arc<Engine>,
    pub sessions: SessionStore,
    pub settings: ReplySettings,
    /// Maximum turns kept per session.
    pub history: usize,
}

impl AppState {
    pub fn new(engine: Arc<Engine>, settings: ReplySettings, history: usize, ttl: Duration) -> Self {
        Self {
            engine,
            sessions: SessionStore::new(ttl),
            settings,
            history: history.max(1),
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/speakers", get(speakers))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", axum::routing::delete(delete_session))
        .route("/v1/sessions/{id}/messages", post(post_message))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, Box<Response>> {
    serde_json::from_slice(body)
        .map_err(|e| Box::new(error(StatusCode::BAD_REQUEST, format!("malformed request body: {e}"))))
}

fn now_millis() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let set = &state.engine.set;
    Json(json!({
        "status": "ok",
        "embedder_fingerprint": set.fingerprint(),
        "metric": set.metric().name(),
        "index": set.kind().name(),
        "context_turns": set.context_turns(),
        "targets": set.targets().collect::<Vec<_>>(),
    }))
}

#[derive(Serialize)]
struct SpeakerView<'a> {
    speaker_id: &'a str,
    responses: usize,
}

async fn speakers(State(state): State<Arc<AppState>>) -> Response {
    let set = &state.engine.set;
    let list: Vec<SpeakerView> = set
        .targets()
        .map(|t| SpeakerView {
            speaker_id: t,
            responses: set.speaker(t).map_or(0, |s| s.len()),
        })
        .collect();
    Json(json!({ "speakers": list })).into_response()
}

#[derive(Deserialize)]
struct CreateSession {
    target_speaker: String,
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: CreateSession = match parse_body(&body) {
        Ok(r) => r,
        Err(resp) => return *resp,
    };
    if !state.engine.has_target(&req.target_speaker) {
        return error(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("unknown target speaker `{}`", req.target_speaker),
        );
    }
    (StatusCode::CREATED, Json(state.sessions.create(req.target_speaker))).into_response()
}

async fn delete_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    if state.sessions.remove(&id) {
        StatusCode::NO_CONTENT.into_response()
    } else {
        error(StatusCode::NOT_FOUND, "unknown session")
    }
}

#[derive(Deserialize)]
struct PostMessage {
    speaker_id: String,
    text: String,
}

async fn post_message(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Response {
    let req: PostMessage = match parse_body(&body) {
        Ok(r) => r,
        Err(resp) => return *resp,
    };
    if req.text.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "text must not be empty");
    }
    let Some(slot) = state.sessions.get(&id) else {
        return error(StatusCode::NOT_FOUND, "unknown session");
    };
    let mut session = slot.session.lock().await;
    push_turn(
        &mut session.history,
        state.history,
        Turn {
            speaker_id: req.speaker_id,
            text: req.text.trim().to_string(),
            timestamp: now_millis(),
        },
    );
    let history: Vec<Turn> = session.history.iter().cloned().collect();
    let reply: Reply = match state
        .engine
        .reply(&history, &session.target_speaker, &state.settings, session.replies)
    {
        Ok(r) => r,
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    session.replies += 1;
    if let Some(text) = &reply.response_text {
        let turn = Turn {
            speaker_id: session.target_speaker.clone(),
            text: text.clone(),
            timestamp: now_millis(),
        };
        push_turn(&mut session.history, state.history, turn);
    }
    Json(reply).into_response()
}

fn push_turn(history: &mut VecDeque<Turn>, cap: usize, turn: Turn) {
    if history.len() == cap {
        history.pop_front();
    }
    history.push_back(turn);
}
