use std::collections::HashMap;
use std::convert::Infallible;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

use lattice_eit_core::gestures::SequenceClassifier;
use lattice_eit_core::inverse::InverseModel;
use lattice_eit_core::service::{Ack, RuleTable, Session, SessionConfig, StreamHub, TickMessage, TouchEvent};
use lattice_eit_core::Error as CoreError;

/// Messages a slow stream client may fall behind before it is conflated.
const STREAM_BUFFER: usize = 16;

/// Everything `serve` needs, loadable from TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    pub port: u16,
    pub session: SessionConfig,
    /// Reconstruction model container (required for the linear method).
    pub model: Option<std::path::PathBuf>,
    pub classifier: Option<std::path::PathBuf>,
    /// Rule table (TOML); the bundled mapping otherwise.
    pub rules: Option<std::path::PathBuf>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            port: 8080,
            session: SessionConfig::default(),
            model: None,
            classifier: None,
            rules: None,
        }
    }
}

pub struct AppState {
    defaults: SessionConfig,
    model: Option<InverseModel>,
    classifier: Option<SequenceClassifier>,
    rules: RuleTable,
    sessions: Mutex<HashMap<u64, SessionHandle>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(
        defaults: SessionConfig,
        model: Option<InverseModel>,
        classifier: Option<SequenceClassifier>,
        rules: RuleTable,
    ) -> Self {
        Self {
            defaults,
            model,
            classifier,
            rules,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn from_config(config: &ServeConfig) -> Result<Self> {
        let model = match &config.model {
            Some(p) => Some(crate::commands::load_inverse(p)?),
            None => None,
        };
        let classifier = match &config.classifier {
            Some(p) => {
                let mut r = std::io::BufReader::new(
                    std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?,
                );
                Some(SequenceClassifier::read_from(&mut r)?)
            }
            None => None,
        };
        let rules = match &config.rules {
            Some(p) => RuleTable::parse(&std::fs::read_to_string(p)?)?,
            None => RuleTable::bundled(),
        };
        Ok(Self::new(config.session.clone(), model, classifier, rules))
    }
}

#[derive(Debug, Default, Clone, Copy, Serialize, Deserialize)]
pub struct TickStats {
    pub ticks: u64,
    pub mean_ms: f64,
    pub max_ms: f64,
}

enum Command {
    Event(TouchEvent, oneshot::Sender<Result<Ack, CoreError>>),
}

struct SessionHandle {
    commands: mpsc::Sender<Command>,
    hub: StreamHub,
    stats: Arc<Mutex<TickStats>>,
}

/// Runs one session on its own thread: queued touch events are applied
/// between ticks, ticks fire at `tick_hz`. Dropping every sender stops it.
fn spawn_session(
    session: Session,
    commands: mpsc::Receiver<Command>,
    hub: StreamHub,
    stats: Arc<Mutex<TickStats>>,
) {
    thread::spawn(move || {
        let mut session = session;
        let period = Duration::from_secs_f64(1.0 / session.config.tick_hz);
        let mut next = Instant::now() + period;
        loop {
            match commands.recv_timeout(next.saturating_duration_since(Instant::now())) {
                Ok(Command::Event(e, reply)) => {
                    let _ = reply.send(session.ingest_touch(e));
                    continue;
                }
                Err(RecvTimeoutError::Disconnected) => return,
                Err(RecvTimeoutError::Timeout) => {}
            }
            let t0 = Instant::now();
            match session.tick() {
                Ok(out) => hub.publish(out.message()),
                Err(e) => eprintln!("tick failed: {e}"),
            }
            let ms = t0.elapsed().as_secs_f64() * 1e3;
            {
                let mut s = stats.lock().unwrap();
                s.ticks += 1;
                s.mean_ms += (ms - s.mean_ms) / s.ticks as f64;
                s.max_ms = s.max_ms.max(ms);
            }
            next += period;
            let now = Instant::now();
            if next < now {
                next = now + period;
            }
        }
    });
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", axum::routing::delete(delete_session))
        .route("/sessions/{id}/events", post(post_events))
        .route("/sessions/{id}/latest", get(latest))
        .route("/sessions/{id}/stats", get(stats))
        .route("/sessions/{id}/stream", get(stream))
        .with_state(state)
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let status = match e {
            CoreError::OutOfDomain { .. } | CoreError::InvalidPhantom(_) | CoreError::UnknownTouchId(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            CoreError::Config(_)
            | CoreError::InvalidGeometry(_)
            | CoreError::HashMismatch { .. }
            | CoreError::Shape(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self(status, e.to_string())
    }
}

fn not_found(id: u64) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("no session {id}"))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub id: u64,
    pub config: SessionConfig,
}

/// Body fields override the server defaults; an empty body is allowed.
async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Option<Json<serde_json::Value>>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let mut merged = serde_json::to_value(&state.defaults).expect("config serializes");
    if let Some(Json(serde_json::Value::Object(patch))) = body {
        merge(&mut merged, serde_json::Value::Object(patch));
    }
    let config: SessionConfig =
        serde_json::from_value(merged).map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?;
    if !(config.tick_hz > 0.0 && config.tick_hz.is_finite()) {
        return Err(ApiError(StatusCode::BAD_REQUEST, "tick_hz must be positive".into()));
    }
    let model = match (config.method, &state.model) {
        (lattice_eit_core::service::Method::Linear, m) => m.clone(),
        (_, Some(m @ InverseModel::Tikhonov(_))) => Some(m.clone()),
        _ => None,
    };
    let classifier = state.classifier.clone();
    let rules = state.rules.clone();
    let c = config.clone();
    let session = tokio::task::spawn_blocking(move || Session::new(c, model, classifier, rules))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let (tx, rx) = mpsc::channel();
    let hub = StreamHub::new(STREAM_BUFFER);
    let stats = Arc::new(Mutex::new(TickStats::default()));
    spawn_session(session, rx, hub.clone(), stats.clone());
    let id = state.next_id.fetch_add(1, Ordering::Relaxed);
    state.sessions.lock().unwrap().insert(
        id,
        SessionHandle {
            commands: tx,
            hub,
            stats,
        },
    );
    Ok((StatusCode::CREATED, Json(Created { id, config })))
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

async fn delete_session(State(state): State<Arc<AppState>>, Path(id): Path<u64>) -> Result<StatusCode, ApiError> {
    state.sessions.lock().unwrap().remove(&id).ok_or_else(|| not_found(id))?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EventBody {
    One(TouchEvent),
    Many(Vec<TouchEvent>),
}

async fn post_events(
    State(state): State<Arc<AppState>>,
    Path(id): Path<u64>,
    Json(body): Json<EventBody>,
) -> Result<Json<Vec<Ack>>, ApiError> {
    let events = match body {
        EventBody::One(e) => vec![e],
        EventBody::Many(v) => v,
    };
    let tx = {
        let sessions = state.sessions.lock().unwrap();
        sessions.get(&id).ok_or_else(|| not_found(id))?.commands.clone()
    };
    let mut acks = Vec::with_capacity(events.len());
    for e in events {
        let (reply, rx) = oneshot::channel();
        tx.send(Command::Event(e, reply)).map_err(|_| not_found(id))?;
        let ack = rx.await.map_err(|_| not_found(id))??;
        acks.push(ack);
    }
    Ok(Json(acks))
}

fn hub(state: &AppState, id: u64) -> Result<StreamHub, ApiError> {
    let sessions = state.sessions.lock().unwrap();
    Ok(sessions.get(&id).ok_or_else(|| not_found(id))?.hub.clone())
}

async fn latest(State(state): State<Arc<AppState>>, Path(id): Path<u64>) -> Result<Response, ApiError> {
    Ok(match hub(&state, id)?.latest() {
        Some(m) => Json(m.as_ref().clone()).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn stats(State(state): State<Arc<AppState>>, Path(id): Path<u64>) -> Result<Json<TickStats>, ApiError> {
    let sessions = state.sessions.lock().unwrap();
    let h = sessions.get(&id).ok_or_else(|| not_found(id))?;
    let snapshot = *h.stats.lock().unwrap();
    Ok(Json(snapshot))
}

async fn stream(
    State(state): State<Arc<AppState>>,
    Path(id): Path<u64>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let sub = hub(&state, id)?.subscribe();
    let events = futures::stream::unfold(sub, |mut sub| async move {
        let m: std::sync::Arc<TickMessage> = sub.next().await?;
        let ev = Event::default().id(m.seq.to_string()).json_data(m.as_ref()).expect("message serializes");
        Some((Ok(ev), sub))
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}

pub async fn serve(config: ServeConfig) -> Result<()> {
    let state = Arc::new(AppState::from_config(&config)?);
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", config.port))
        .await
        .with_context(|| format!("binding port {}", config.port))?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
