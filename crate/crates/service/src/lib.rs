//! JSON-over-HTTP service for interactive sessions.
//!
//! | method | path                         | body                     |
//! |--------|------------------------------|--------------------------|
//! | POST   | `/sessions`                  | `{example_id}` or `{activations}` |
//! | GET    | `/sessions/{id}`             |                          |
//! | POST   | `/sessions/{id}/predict`     |                          |
//! | POST   | `/sessions/{id}/intervene`   | an intervention action   |
//! | GET    | `/sessions/{id}/history`     |                          |
//! | GET    | `/healthz`                   |                          |
//!
//! Mutating calls on a session that is already busy get 409 instead of
//! waiting.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chatcbm_core::intervention::{apply_conversational, apply_numerical};
use chatcbm_core::{
    ActivationRecordF64, Backend, BackendError, CandidateSet, ChatMessage, Error, InterventionAction,
    PipelineF64, Prediction, SemanticSet, SessionStateF64,
};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex as AsyncMutex;
use tower_http::cors::CorsLayer;

pub const DEFAULT_TTL: Duration = Duration::from_secs(3600);

struct Slot {
    state: Arc<AsyncMutex<SessionStateF64>>,
    touched: Instant,
}

struct Inner {
    pipeline: PipelineF64,
    examples: HashMap<String, ActivationRecordF64>,
    backend: Arc<dyn Backend>,
    sessions: Mutex<HashMap<String, Slot>>,
    ttl: Duration,
}

/// Shared service state; clones refer to the same session store.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(
        pipeline: PipelineF64,
        examples: impl IntoIterator<Item = ActivationRecordF64>,
        backend: Arc<dyn Backend>,
    ) -> Self {
        Self::with_ttl(pipeline, examples, backend, DEFAULT_TTL)
    }

    pub fn with_ttl(
        pipeline: PipelineF64,
        examples: impl IntoIterator<Item = ActivationRecordF64>,
        backend: Arc<dyn Backend>,
        ttl: Duration,
    ) -> Self {
        Self(Arc::new(Inner {
            pipeline,
            examples: examples
                .into_iter()
                .map(|r| (r.example_id.clone(), r))
                .collect(),
            backend,
            sessions: Mutex::new(HashMap::new()),
            ttl,
        }))
    }

    fn store(&self) -> std::sync::MutexGuard<'_, HashMap<String, Slot>> {
        self.0.sessions.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn lookup(&self, id: &str) -> Result<Arc<AsyncMutex<SessionStateF64>>, ApiError> {
        let mut store = self.store();
        let slot = store.get_mut(id).ok_or_else(|| ApiError::unknown_session(id))?;
        slot.touched = Instant::now();
        Ok(Arc::clone(&slot.state))
    }

    pub fn session_count(&self) -> usize {
        self.store().len()
    }

    /// Drops sessions idle for longer than the TTL as of `now`. Returns the
    /// number evicted.
    pub fn sweep(&self, now: Instant) -> usize {
        let ttl = self.0.ttl;
        let mut store = self.store();
        let before = store.len();
        store.retain(|_, s| now.saturating_duration_since(s.touched) <= ttl);
        before - store.len()
    }

    /// Writes every session that is not mid-request as one JSON line.
    pub fn export_jsonl(&self, path: &Path) -> std::io::Result<usize> {
        let slots: Vec<_> = self.store().values().map(|s| Arc::clone(&s.state)).collect();
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut n = 0;
        for slot in slots {
            if let Ok(s) = slot.try_lock() {
                serde_json::to_writer(&mut out, &*s)?;
                out.write_all(b"\n")?;
                n += 1;
            }
        }
        out.flush()?;
        Ok(n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempts: Option<u32>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.into(),
                message: message.into(),
                field: None,
                attempts: None,
            },
        }
    }

    fn field(mut self, field: impl Into<String>) -> Self {
        self.body.field = Some(field.into());
        self
    }

    fn unknown_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no session `{id}`"))
    }

    fn busy() -> Self {
        Self::new(
            StatusCode::CONFLICT,
            "busy",
            "another request on this session is in progress",
        )
    }

    /// Maps a core error; `field` names the request field that inline
    /// activations or edited values came from.
    fn from_core(err: Error, field: &str) -> Self {
        let msg = err.to_string();
        let invalid = |f: Option<String>| {
            let e = Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", msg.clone());
            match f {
                Some(f) => e.field(f),
                None => e,
            }
        };
        match err {
            Error::Backend(b) => {
                let attempts = match &b {
                    BackendError::Transport { attempts, .. } => Some(*attempts),
                    _ => None,
                };
                let mut e = Self::new(StatusCode::BAD_GATEWAY, "backend", msg);
                e.body.attempts = attempts;
                e
            }
            Error::OutOfRange { concept_id, .. } if field == "activations" => {
                invalid(Some(format!("activations[{concept_id}]")))
            }
            Error::OutOfRange { .. } => invalid(Some("value".into())),
            Error::LengthMismatch { .. } | Error::DimensionMismatch { .. } => {
                invalid(Some(field.to_string()))
            }
            Error::UnknownConcept(_) => invalid(Some("concept_id".into())),
            Error::InvalidIntervention(_) => invalid(Some("text".into())),
            Error::UnknownClass(_) | Error::Validation(_) | Error::Empty(_) | Error::Oversize { .. } => {
                invalid(None)
            }
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", msg),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", r.body_text())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example_id: Option<String>,
    pub activations: Vec<f64>,
    pub semantics: SemanticSet,
    pub candidates: CandidateSet,
    pub prediction: Option<PredictionView>,
    pub history_len: usize,
    pub interventions: usize,
}

impl From<&SessionStateF64> for SessionView {
    fn from(s: &SessionStateF64) -> Self {
        Self {
            session_id: s.session_id.clone(),
            example_id: s.example_id.clone(),
            activations: s.activations.clone(),
            semantics: s.semantics.clone(),
            candidates: s.candidates.clone(),
            prediction: s.last_prediction.as_ref().map(PredictionView::from),
            history_len: s.history.len(),
            interventions: s.intervention_log.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionView {
    pub analysis: Option<String>,
    pub answer: Option<String>,
    pub predicted_class: Option<String>,
    pub parse_ok: bool,
    pub raw: String,
}

impl From<&Prediction> for PredictionView {
    fn from(p: &Prediction) -> Self {
        Self {
            analysis: p.analysis.clone(),
            answer: chatcbm_core::parse_response(&p.raw).answer,
            predicted_class: p.class_name.clone(),
            parse_ok: p.parse_ok,
            raw: p.raw.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResponse {
    /// Absent for numerical edits, which do not call the model.
    pub prediction: Option<PredictionView>,
    pub session: SessionView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryResponse {
    pub session_id: String,
    pub history: Vec<ChatMessage>,
    pub intervention_log: Vec<InterventionAction>,
    /// Messages sent on the last model call followed by its reply.
    pub last_transcript: Vec<ChatMessage>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub example_id: Option<String>,
    pub activations: Option<Vec<f64>>,
}

async fn create(
    State(app): State<AppState>,
    body: Result<Json<CreateRequest>, JsonRejection>,
) -> Result<Json<SessionView>, ApiError> {
    let Json(req) = body?;
    let (example_id, activations) = match (req.example_id, req.activations) {
        (Some(id), None) => {
            let rec = app.0.examples.get(&id).ok_or_else(|| {
                ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no example `{id}`"))
            })?;
            (Some(id), rec.activations.clone())
        }
        (None, Some(acts)) => (None, acts),
        _ => {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid",
                "give exactly one of example_id or activations",
            ))
        }
    };
    let id = uuid::Uuid::new_v4().to_string();
    let mut state = app
        .0
        .pipeline
        .new_session(id.clone(), activations)
        .map_err(|e| ApiError::from_core(e, "activations"))?;
    state.example_id = example_id;
    let view = SessionView::from(&state);
    app.store().insert(
        id,
        Slot {
            state: Arc::new(AsyncMutex::new(state)),
            touched: Instant::now(),
        },
    );
    Ok(Json(view))
}

async fn show(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionView>, ApiError> {
    let slot = app.lookup(&id)?;
    let s = slot.lock().await;
    Ok(Json(SessionView::from(&*s)))
}

async fn history(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<HistoryResponse>, ApiError> {
    let slot = app.lookup(&id)?;
    let s = slot.lock().await;
    Ok(Json(HistoryResponse {
        session_id: s.session_id.clone(),
        history: s.history.clone(),
        intervention_log: s.intervention_log.clone(),
        last_transcript: s.last_transcript.clone(),
    }))
}

/// Runs `op` on the session with exclusive access, off the async runtime.
/// The session is only replaced when `op` succeeds.
async fn mutate<F>(app: AppState, id: String, op: F) -> Result<Json<StepResponse>, ApiError>
where
    F: FnOnce(&PipelineF64, &dyn Backend, &mut SessionStateF64) -> Result<Option<Prediction>, ApiError>
        + Send
        + 'static,
{
    let slot = app.lookup(&id)?;
    let mut guard = slot.try_lock_owned().map_err(|_| ApiError::busy())?;
    let inner = Arc::clone(&app.0);
    tokio::task::spawn_blocking(move || {
        let mut work = guard.clone();
        let prediction = op(&inner.pipeline, inner.backend.as_ref(), &mut work)?;
        *guard = work;
        Ok(Json(StepResponse {
            prediction: prediction.as_ref().map(PredictionView::from),
            session: SessionView::from(&*guard),
        }))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

async fn predict(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<StepResponse>, ApiError> {
    mutate(app, id, |pipeline, backend, s| {
        pipeline
            .predict(s, backend)
            .map(Some)
            .map_err(|e| ApiError::from_core(e, "activations"))
    })
    .await
}

async fn intervene(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<InterventionAction>, JsonRejection>,
) -> Result<Json<StepResponse>, ApiError> {
    let Json(action) = body?;
    mutate(app, id, move |pipeline, backend, s| match action {
        InterventionAction::SetScore { concept_id, value } => {
            apply_numerical(s, &[(concept_id, value)], pipeline)
                .map(|_| None)
                .map_err(|e| ApiError::from_core(e, "value"))
        }
        other => apply_conversational(s, other, pipeline, backend)
            .map(Some)
            .map_err(|e| ApiError::from_core(e, "text")),
    })
    .await
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    sessions: usize,
    backend: String,
}

async fn healthz(State(app): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok",
        sessions: app.session_count(),
        backend: app.0.backend.name().to_string(),
    })
}

async fn log_requests(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let start = Instant::now();
    let resp = next.run(req).await;
    log::info!(
        "method={method} path={path} status={} latency_ms={}",
        resp.status().as_u16(),
        start.elapsed().as_millis()
    );
    resp
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/:id", get(show))
        .route("/sessions/:id/predict", post(predict))
        .route("/sessions/:id/intervene", post(intervene))
        .route("/sessions/:id/history", get(history))
        .route("/healthz", get(healthz))
        .layer(middleware::from_fn(log_requests))
        .layer(CorsLayer::permissive())
        .with_state(app)
}

/// Evicts idle sessions every `every` until the runtime shuts down.
pub fn spawn_sweeper(app: AppState, every: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        loop {
            tick.tick().await;
            let n = app.sweep(Instant::now());
            if n > 0 {
                log::info!("evicted {n} idle sessions");
            }
        }
    })
}

/// Serves until ctrl-c, then optionally exports live sessions.
pub async fn serve(app: AppState, addr: std::net::SocketAddr, export: Option<&Path>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    let sweeper = spawn_sweeper(app.clone(), Duration::from_secs(60));
    axum::serve(listener, router(app.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    sweeper.abort();
    if let Some(path) = export {
        let n = app.export_jsonl(path)?;
        log::info!("exported {n} sessions to {}", path.display());
    }
    Ok(())
}
