//! HTTP sessions over structural beam search. A client creates a session
//! for one source sentence, then advances it one tree depth per request,
//! optionally replacing beam contexts before each step.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use syngen::model::{AnyModel, EncodedSource, ModelError, ScoreModel};
use syngen::search::{
    structural_beam_search, BeamCandidate, BeamEntry, BeamState, DecodeTrace, DepthRecord, EditRecord, Expansion,
    SearchConfig, SearchError,
};
use syngen::tree::{SyntaxContext, Whitelist};
use thiserror::Error;
use uuid::Uuid;

pub const HUMAN_ORIGIN: &str = "human";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub idle_timeout: Duration,
    /// Reject sources containing tokens outside the model vocabulary.
    pub strict_vocab: bool,
    /// Labels allowed in edited contexts.
    pub whitelist: Whitelist,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            idle_timeout: Duration::from_secs(30 * 60),
            strict_vocab: true,
            whitelist: Whitelist::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("source is empty")]
    EmptySource,
    #[error("tokens not in the model vocabulary: {}", .0.join(" "))]
    UnknownTokens(Vec<String>),
    #[error("{0}")]
    InvalidConfig(String),
    #[error("{0}")]
    BadEdit(String),
    #[error("no session `{0}` (unknown or expired)")]
    NoSession(String),
    #[error("session already finished")]
    Finished,
    #[error("{0}")]
    Search(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::BadRequest(_) => "bad_request",
            ApiError::EmptySource => "empty_source",
            ApiError::UnknownTokens(_) => "unknown_token",
            ApiError::InvalidConfig(_) => "invalid_config",
            ApiError::BadEdit(_) => "bad_edit",
            ApiError::NoSession(_) => "session_not_found",
            ApiError::Finished => "session_finished",
            ApiError::Search(_) => "search_failed",
            ApiError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::BadRequest(_)
            | ApiError::EmptySource
            | ApiError::UnknownTokens(_)
            | ApiError::InvalidConfig(_)
            | ApiError::BadEdit(_) => StatusCode::BAD_REQUEST,
            ApiError::NoSession(_) => StatusCode::NOT_FOUND,
            ApiError::Finished => StatusCode::CONFLICT,
            ApiError::Search(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code(), "message": self.to_string() } });
        (self.status(), Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::BadRequest(r.body_text())
    }
}

impl From<SearchError> for ApiError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::Config(m) => ApiError::InvalidConfig(m),
            SearchError::Edit(m) => ApiError::BadEdit(m),
            SearchError::Finished => ApiError::Finished,
            SearchError::Model(ModelError::OutOfVocab(t)) => ApiError::UnknownTokens(vec![t]),
            other => ApiError::Search(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Active,
    Finished,
    Failed,
}

pub struct Session {
    id: Uuid,
    source: Vec<String>,
    encoded: EncodedSource,
    state: BeamState,
    last_used: Instant,
}

impl Session {
    fn status(&self) -> SessionStatus {
        if !self.state.is_done() {
            SessionStatus::Active
        } else if self.state.finish().is_ok() {
            SessionStatus::Finished
        } else {
            SessionStatus::Failed
        }
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            session_id: self.id.to_string(),
            depth: self.state.depth(),
            status: self.status(),
            beam: self.state.entries(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub session_id: String,
    pub depth: usize,
    pub status: SessionStatus,
    pub beam: Vec<BeamEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepResponse {
    #[serde(flatten)]
    pub snapshot: Snapshot,
    pub edits: Vec<EditRecord>,
    pub expansions: Vec<Expansion>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<String>,
    pub score: f64,
    pub finished: bool,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    pub trace: DecodeTrace,
}

impl From<&BeamCandidate> for Hypothesis {
    fn from(c: &BeamCandidate) -> Self {
        Hypothesis {
            tokens: c.tokens(),
            score: c.score,
            finished: c.finished,
            failed: c.failed,
            diagnostic: c.diagnostic.clone(),
            trace: c.trace.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionHistory {
    #[serde(flatten)]
    pub snapshot: Snapshot,
    pub source: Vec<String>,
    pub config: SearchConfig,
    pub history: Vec<DepthRecord>,
    /// Ranked hypotheses once the session is finished.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypotheses: Option<Vec<Hypothesis>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateRequest {
    pub source: Vec<String>,
    #[serde(default)]
    pub config: SearchConfig,
}

#[derive(Debug, Clone, Deserialize)]
pub struct EditRequest {
    pub index: usize,
    pub context: Vec<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct StepRequest {
    #[serde(default)]
    pub edits: Vec<EditRequest>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub hypotheses: Vec<Hypothesis>,
}

type SessionHandle = Arc<Mutex<Session>>;

struct Inner {
    model: AnyModel,
    config: ServiceConfig,
    sessions: Mutex<HashMap<Uuid, SessionHandle>>,
}

/// Shared server state: one model, many sessions.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(model: AnyModel, config: ServiceConfig) -> Self {
        AppState(Arc::new(Inner {
            model,
            config,
            sessions: Mutex::new(HashMap::new()),
        }))
    }

    pub fn model(&self) -> &AnyModel {
        &self.0.model
    }

    pub fn session_count(&self) -> usize {
        self.0.sessions.lock().expect("session table").len()
    }

    /// Drops sessions idle for longer than the timeout; returns how many.
    pub fn expire_idle(&self) -> usize {
        let timeout = self.0.config.idle_timeout;
        let mut table = self.0.sessions.lock().expect("session table");
        let before = table.len();
        table.retain(|_, s| match s.try_lock() {
            Ok(s) => s.last_used.elapsed() <= timeout,
            Err(_) => true,
        });
        before - table.len()
    }

    fn lookup(&self, id: &str) -> Result<SessionHandle, ApiError> {
        self.expire_idle();
        let uuid = Uuid::parse_str(id).map_err(|_| ApiError::NoSession(id.to_string()))?;
        self.0
            .sessions
            .lock()
            .expect("session table")
            .get(&uuid)
            .cloned()
            .ok_or_else(|| ApiError::NoSession(id.to_string()))
    }

    fn check_source(&self, source: &[String]) -> Result<(), ApiError> {
        if source.is_empty() {
            return Err(ApiError::EmptySource);
        }
        if self.0.config.strict_vocab {
            let vocab = self.0.model.vocab();
            let unknown: Vec<String> = source.iter().filter(|t| vocab.id(t).is_none()).cloned().collect();
            if !unknown.is_empty() {
                return Err(ApiError::UnknownTokens(unknown));
            }
        }
        Ok(())
    }

    fn create(&self, req: CreateRequest) -> Result<Snapshot, ApiError> {
        self.check_source(&req.source)?;
        let state = BeamState::new(req.config)?;
        let session = Session {
            id: Uuid::new_v4(),
            encoded: self.0.model.encode_source(&req.source),
            source: req.source,
            state,
            last_used: Instant::now(),
        };
        let snap = session.snapshot();
        self.expire_idle();
        self.0
            .sessions
            .lock()
            .expect("session table")
            .insert(session.id, Arc::new(Mutex::new(session)));
        Ok(snap)
    }

    fn step(&self, handle: &SessionHandle, req: StepRequest) -> Result<StepResponse, ApiError> {
        let mut session = handle.lock().map_err(|_| ApiError::Internal("session lock poisoned".into()))?;
        session.last_used = Instant::now();
        if session.state.is_done() {
            return Err(ApiError::Finished);
        }
        // Applied to a copy so a rejected request leaves the session untouched.
        let mut state = session.state.clone();
        for e in req.edits {
            let context = SyntaxContext::from_surfaces(&e.context).map_err(|err| ApiError::BadEdit(err.to_string()))?;
            context
                .check_labels(&self.0.config.whitelist)
                .map_err(|err| ApiError::BadEdit(err.to_string()))?;
            state.edit(e.index, context, HUMAN_ORIGIN)?;
        }
        let record = state.step(&self.0.model, &session.encoded)?.clone();
        session.state = state;
        Ok(StepResponse {
            snapshot: session.snapshot(),
            edits: record.edits,
            expansions: record.expansions,
        })
    }

    fn history(&self, handle: &SessionHandle) -> Result<SessionHistory, ApiError> {
        let mut session = handle.lock().map_err(|_| ApiError::Internal("session lock poisoned".into()))?;
        session.last_used = Instant::now();
        let (hypotheses, error) = if session.state.is_done() {
            match session.state.finish() {
                Ok(c) => (Some(c.iter().map(Hypothesis::from).collect()), None),
                Err(e) => (None, Some(e.to_string())),
            }
        } else {
            (None, None)
        };
        Ok(SessionHistory {
            snapshot: session.snapshot(),
            source: session.source.clone(),
            config: session.state.config().clone(),
            history: session.state.history().to_vec(),
            hypotheses,
            error,
        })
    }

    fn generate(&self, req: CreateRequest) -> Result<GenerateResponse, ApiError> {
        self.check_source(&req.source)?;
        let out = structural_beam_search(&self.0.model, &req.source, &req.config)?;
        Ok(GenerateResponse {
            hypotheses: out.candidates.iter().map(Hypothesis::from).collect(),
        })
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn create_session(
    State(app): State<AppState>,
    body: Result<Json<CreateRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<Snapshot>), ApiError> {
    let Json(req) = body?;
    Ok((StatusCode::CREATED, Json(app.create(req)?)))
}

async fn step_session(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<StepRequest>, JsonRejection>,
) -> Result<Json<StepResponse>, ApiError> {
    let Json(req) = body?;
    let handle = app.lookup(&id)?;
    blocking(move || app.step(&handle, req)).await.map(Json)
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionHistory>, ApiError> {
    let handle = app.lookup(&id)?;
    blocking(move || app.history(&handle)).await.map(Json)
}

async fn generate(
    State(app): State<AppState>,
    body: Result<Json<CreateRequest>, JsonRejection>,
) -> Result<Json<GenerateResponse>, ApiError> {
    let Json(req) = body?;
    blocking(move || app.generate(req)).await.map(Json)
}

async fn healthz(State(app): State<AppState>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "model_kind": app.model().kind().name(),
        "vocab_size": app.model().vocab().len(),
    }))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/step", post(step_session))
        .route("/sessions/{id}", get(get_session))
        .route("/generate", post(generate))
        .route("/healthz", get(healthz))
        .with_state(state)
}

/// Serves until the process is stopped, sweeping idle sessions once a minute.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let sweeper = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            sweeper.expire_idle();
        }
    });
    axum::serve(listener, router(state)).await
}
