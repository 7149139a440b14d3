//! HTTP front of the search engine.
//!
//! `POST /api/search` runs the symbolic tier alone. `POST /api/neural-search`
//! streams newline-delimited [`StreamRecord`]s: the session runs on a
//! blocking thread and hands records over a bounded channel, so the first
//! symbolic result leaves the server while the neural tier is still being
//! computed. Dropping the connection closes the channel, which the session
//! sees as a refused record and stops.

use std::collections::HashMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use nes_core::matcher::ExpandMode;
use nes_core::retrieval::{
    aggregate, symbolic_search, CaptureTable, ExtractionResult, RetrievalError, SearchEngine, SearchSummary,
    SessionConfig, StreamRecord,
};
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

pub const DEFAULT_PORT: u16 = 7334;
pub const DEFAULT_SEARCH_CAP: usize = 10_000;
pub const DEFAULT_SESSION_TTL: Duration = Duration::from_secs(15 * 60);
pub const SESSION_HEADER: &str = "x-session-id";

const CHANNEL_DEPTH: usize = 64;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Name the loaded corpus answers to; requests naming another get 404.
    pub corpus_name: Option<String>,
    pub search_cap: usize,
    pub session_ttl: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { corpus_name: None, search_cap: DEFAULT_SEARCH_CAP, session_ttl: DEFAULT_SESSION_TTL }
    }
}

#[derive(Default)]
struct SessionState {
    results: Vec<ExtractionResult>,
    summary: Option<SearchSummary>,
}

struct Session {
    touched: Instant,
    state: Arc<Mutex<SessionState>>,
}

pub struct AppState {
    engine: Arc<SearchEngine>,
    config: ServiceConfig,
    sessions: Mutex<HashMap<String, Session>>,
}

impl AppState {
    pub fn new(engine: Arc<SearchEngine>, config: ServiceConfig) -> Arc<Self> {
        Arc::new(AppState { engine, config, sessions: Mutex::new(HashMap::new()) })
    }

    fn evict(&self, sessions: &mut HashMap<String, Session>) {
        let ttl = self.config.session_ttl;
        sessions.retain(|_, s| s.touched.elapsed() < ttl);
    }

    fn open_session(&self) -> (String, Arc<Mutex<SessionState>>) {
        let id = uuid::Uuid::new_v4().to_string();
        let state = Arc::new(Mutex::new(SessionState::default()));
        let mut sessions = self.sessions.lock().expect("session lock");
        self.evict(&mut sessions);
        sessions.insert(id.clone(), Session { touched: Instant::now(), state: state.clone() });
        (id, state)
    }

    fn session(&self, id: &str) -> Option<Arc<Mutex<SessionState>>> {
        let mut sessions = self.sessions.lock().expect("session lock");
        self.evict(&mut sessions);
        sessions.get_mut(id).map(|s| {
            s.touched = Instant::now();
            s.state.clone()
        })
    }

    fn check_corpus(&self, requested: Option<&str>) -> Result<(), ApiError> {
        match (requested, &self.config.corpus_name) {
            (None, _) => Ok(()),
            (Some(r), Some(name)) if r == name => Ok(()),
            (Some(r), _) => Err(ApiError::new(StatusCode::NOT_FOUND, "UnknownCorpus", format!("no corpus named {r:?}"))),
        }
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: String) -> Self {
        ApiError { status, body: ErrorBody { error: code, message } }
    }
}

impl From<RetrievalError> for ApiError {
    fn from(e: RetrievalError) -> Self {
        let status = match &e {
            RetrievalError::Query(_) | RetrievalError::InvalidConfig(_) | RetrievalError::NoSymbolicResults => {
                StatusCode::BAD_REQUEST
            }
            RetrievalError::ModelMissing => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SearchRequest {
    pub query: String,
    #[serde(default)]
    pub corpus: Option<String>,
    #[serde(default)]
    pub capture_display_mode: ExpandMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub matches: Vec<ExtractionResult>,
    pub aggregate: CaptureTable,
    /// The server cap cut the match list short.
    pub truncated: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NeuralSearchRequest {
    pub query: String,
    #[serde(default)]
    pub corpus: Option<String>,
    /// Missing fields take their defaults.
    #[serde(default)]
    pub session: Option<serde_json::Value>,
}

#[derive(Debug, Deserialize)]
struct AggregateParams {
    session: String,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/search", post(search))
        .route("/api/neural-search", post(neural_search))
        .route("/api/aggregate", get(session_aggregate))
        .route("/api/sentence/{id}", get(sentence))
        .route("/api/health", get(health))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await
}

async fn search(State(app): State<Arc<AppState>>, Json(req): Json<SearchRequest>) -> Result<Json<SearchResponse>, ApiError> {
    app.check_corpus(req.corpus.as_deref())?;
    let engine = app.engine.clone();
    let cap = app.config.search_cap;
    let (matches, truncated) = tokio::task::spawn_blocking(move || {
        symbolic_search(&engine.corpus, &req.query, req.capture_display_mode, Some(cap))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))??;
    let aggregate = aggregate(&matches);
    Ok(Json(SearchResponse { matches, aggregate, truncated }))
}

fn session_config(raw: Option<serde_json::Value>) -> Result<SessionConfig, ApiError> {
    let Some(raw) = raw else { return Ok(SessionConfig::default()) };
    let mut merged = serde_json::to_value(SessionConfig::default()).expect("config serializes");
    match (raw, &mut merged) {
        (serde_json::Value::Object(given), serde_json::Value::Object(base)) => base.extend(given),
        _ => return Err(ApiError::new(StatusCode::BAD_REQUEST, "InvalidConfig", "session must be an object".into())),
    }
    serde_json::from_value(merged).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "InvalidConfig", e.to_string()))
}

enum Msg {
    Record(StreamRecord),
    Failed(RetrievalError),
}

fn ndjson_line(record: &StreamRecord) -> Bytes {
    let mut line = serde_json::to_vec(record).expect("records serialize");
    line.push(b'\n');
    Bytes::from(line)
}

async fn neural_search(
    State(app): State<Arc<AppState>>,
    Json(req): Json<NeuralSearchRequest>,
) -> Result<Response, ApiError> {
    app.check_corpus(req.corpus.as_deref())?;
    let config = session_config(req.session)?;
    let (session_id, session) = app.open_session();
    let (tx, mut rx) = mpsc::channel::<Msg>(CHANNEL_DEPTH);
    let engine = app.engine.clone();
    let query = req.query;
    let sid = session_id.clone();
    tokio::task::spawn_blocking(move || {
        let mut sink = |record: StreamRecord| {
            {
                let mut st = session.lock().expect("session state lock");
                match &record {
                    StreamRecord::Result(r) => st.results.push(r.clone()),
                    StreamRecord::Summary(s) => st.summary = Some(s.clone()),
                }
            }
            tx.blocking_send(Msg::Record(record)).is_ok()
        };
        match engine.extractive_neural_search(&query, &config, &mut sink) {
            Ok(Some(_)) => tracing::debug!(session = %sid, "session finished"),
            Ok(None) => tracing::debug!(session = %sid, "client went away; session aborted"),
            Err(e) => {
                let _ = tx.blocking_send(Msg::Failed(e));
            }
        }
    });

    // every failure mode precedes the first record, so it can still be a status code
    let first = match rx.recv().await {
        Some(Msg::Record(r)) => r,
        Some(Msg::Failed(e)) => return Err(e.into()),
        None => return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", "session ended silently".into())),
    };
    let head = futures::stream::once(async move { Ok::<_, Infallible>(ndjson_line(&first)) });
    let tail = futures::stream::unfold(rx, |mut rx| async move {
        match rx.recv().await? {
            Msg::Record(r) => Some((Ok::<_, Infallible>(ndjson_line(&r)), rx)),
            Msg::Failed(e) => {
                tracing::warn!(error = %e, "session failed mid-stream");
                None
            }
        }
    });
    let mut response = Response::new(Body::from_stream(futures::StreamExt::chain(head, tail)));
    let headers = response.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/x-ndjson"));
    headers.insert(SESSION_HEADER, HeaderValue::from_str(&session_id).expect("uuid is a valid header"));
    Ok(response)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResponse {
    pub session: String,
    pub finished: bool,
    pub results: usize,
    pub aggregate: CaptureTable,
}

async fn session_aggregate(
    State(app): State<Arc<AppState>>,
    Query(params): Query<AggregateParams>,
) -> Result<Json<AggregateResponse>, ApiError> {
    let state = app
        .session(&params.session)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownSession", format!("no session {}", params.session)))?;
    let st = state.lock().expect("session state lock");
    Ok(Json(AggregateResponse {
        session: params.session,
        finished: st.summary.is_some(),
        results: st.results.len(),
        aggregate: aggregate(&st.results),
    }))
}

async fn sentence(State(app): State<Arc<AppState>>, Path(id): Path<u64>) -> Result<Response, ApiError> {
    let s = app
        .engine
        .corpus
        .get_sentence(id)
        .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, e.code(), e.to_string()))?;
    Ok(Json(s).into_response())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub corpus: Option<String>,
    pub sentences: usize,
    pub model_loaded: bool,
}

async fn health(State(app): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        corpus: app.config.corpus_name.clone(),
        sentences: app.engine.corpus.len(),
        model_loaded: app.engine.model.is_some(),
    })
}
