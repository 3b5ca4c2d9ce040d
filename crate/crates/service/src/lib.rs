//! JSON-over-HTTP front end for a loaded clinrag snapshot.
//!
//! Routes:
//!
//! | method | path | body | response |
//! |---|---|---|---|
//! | GET | `/health` | | `{loaded, sessions}` |
//! | POST | `/sessions` | raw SOAP text | `{session_id, case}` |
//! | POST | `/sessions/{id}/retrieve` | [`RetrieveOptions`] | [`EvidenceReport`] |
//! | POST | `/sessions/{id}/qa` | [`QaRequest`] | [`QaResponse`] |
//! | GET | `/provenance/{unit_id}` | | [`Provenance`] |
//!
//! Errors carry an [`ErrorBody`]: 400 bad input, 404 unknown session or
//! unit, 409 no index loaded, 502 embedding or LLM backend failure.

mod error;
mod session;

use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderValue, Method};
use axum::routing::{get, post};
use axum::{Json, Router};
use clinrag::engine::{EvidenceReport, RetrieveOptions};
use clinrag::qa::{Citation, LlmClient, LlmParams};
use clinrag::{Engine, Provenance, SoapCase};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use error::{ApiError, ErrorBody};
pub use session::{LockedSession, SessionStore};

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    pub session_ttl: Duration,
    /// Upper bound on concurrent embedding and LLM work.
    pub max_outstanding_calls: usize,
    /// `None` allows any origin.
    pub cors_origin: Option<String>,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        Self {
            session_ttl: Duration::from_secs(3600),
            max_outstanding_calls: 8,
            cors_origin: None,
        }
    }
}

impl From<&clinrag::config::ServiceSettings> for ServiceOptions {
    fn from(s: &clinrag::config::ServiceSettings) -> Self {
        Self {
            session_ttl: Duration::from_secs(s.session_ttl_secs),
            max_outstanding_calls: s.max_outstanding_calls.max(1),
            cors_origin: Some(s.cors_origin.clone()).filter(|o| !o.is_empty() && o != "*"),
        }
    }
}

pub struct AppState {
    engine: RwLock<Option<Arc<Engine>>>,
    sessions: SessionStore,
    client: Arc<dyn LlmClient>,
    slots: Semaphore,
    cors_origin: Option<String>,
}

impl AppState {
    pub fn new(
        engine: Option<Engine>,
        client: Arc<dyn LlmClient>,
        opts: ServiceOptions,
    ) -> Arc<Self> {
        Arc::new(Self {
            engine: RwLock::new(engine.map(Arc::new)),
            sessions: SessionStore::new(opts.session_ttl),
            client,
            slots: Semaphore::new(opts.max_outstanding_calls.max(1)),
            cors_origin: opts.cors_origin,
        })
    }

    /// Swap in a new snapshot; existing sessions keep their locked case.
    pub fn load_engine(&self, engine: Engine) {
        *self.engine.write().expect("engine lock poisoned") = Some(Arc::new(engine));
    }

    pub fn engine(&self) -> Option<Arc<Engine>> {
        self.engine.read().expect("engine lock poisoned").clone()
    }

    pub fn sessions(&self) -> &SessionStore {
        &self.sessions
    }

    fn require_engine(&self) -> Result<Arc<Engine>, ApiError> {
        self.engine().ok_or_else(ApiError::index_not_loaded)
    }

    fn require_session(&self, id: &str) -> Result<LockedSession, ApiError> {
        self.sessions
            .get(id)
            .ok_or_else(|| ApiError::session_not_found(id))
    }

    /// Run blocking engine work on the blocking pool, bounded by the slot count.
    async fn blocking<T, F>(&self, f: F) -> Result<T, ApiError>
    where
        F: FnOnce() -> Result<T, ApiError> + Send + 'static,
        T: Send + 'static,
    {
        let _permit = self
            .slots
            .acquire()
            .await
            .map_err(|_| ApiError::internal("service shutting down"))?;
        tokio::task::spawn_blocking(f)
            .await
            .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub loaded: bool,
    pub sessions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub case: SoapCase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaRequest {
    pub question: String,
    #[serde(flatten)]
    pub options: RetrieveOptions,
    #[serde(default)]
    pub params: LlmParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaResponse {
    pub answer: String,
    /// The exact prompt sent to the client.
    pub prompt_echo: String,
    pub citations: Vec<Citation>,
}

pub fn router(state: Arc<AppState>) -> Router {
    let origin = match &state.cors_origin {
        Some(o) => match HeaderValue::from_str(o) {
            Ok(v) => AllowOrigin::exact(v),
            Err(_) => {
                tracing::warn!(origin = %o, "invalid CORS origin, allowing any");
                AllowOrigin::any()
            }
        },
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([axum::http::header::CONTENT_TYPE]);
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/retrieve", post(retrieve))
        .route("/sessions/{id}/qa", post(qa))
        .route("/provenance/{*unit_id}", get(provenance))
        .layer(cors)
        .with_state(state)
}

/// Serve until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        loaded: state.engine().is_some(),
        sessions: state.sessions.len(),
    })
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: String,
) -> Result<Json<SessionCreated>, ApiError> {
    let engine = state.require_engine()?;
    let session_id = uuid::Uuid::new_v4().to_string();
    let case_id = format!("session:{session_id}");
    let (case, query) = state
        .blocking(move || {
            let case = engine.lock_case(&body, &case_id)?;
            let query = engine.query(&case)?;
            Ok((case, query))
        })
        .await?;
    state.sessions.insert(LockedSession {
        session_id: session_id.clone(),
        case: case.clone(),
        query,
        created_at: Instant::now(),
    });
    tracing::info!(%session_id, concepts = case.concepts.len(), "session locked");
    Ok(Json(SessionCreated { session_id, case }))
}

/// Empty bodies take defaults so a bare POST retrieves with both streams on.
fn parse_body<T: serde::de::DeserializeOwned + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| {
        ApiError::bad_request("InvalidRequest", "malformed JSON body").with_detail(e.to_string())
    })
}

async fn retrieve(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<EvidenceReport>, ApiError> {
    let session = state.require_session(&id)?;
    let engine = state.require_engine()?;
    let opts: RetrieveOptions = parse_body(&body)?;
    let report = state
        .blocking(move || Ok(engine.report(&session.case, &session.query, &opts)?))
        .await?;
    Ok(Json(report))
}

async fn qa(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<QaResponse>, ApiError> {
    let session = state.require_session(&id)?;
    let engine = state.require_engine()?;
    let req: QaRequest = serde_json::from_slice(&body).map_err(|e| {
        ApiError::bad_request("InvalidRequest", "malformed JSON body").with_detail(e.to_string())
    })?;
    if req.question.trim().is_empty() {
        return Err(ApiError::bad_request(
            "EmptyQuestion",
            "question must not be empty",
        ));
    }
    let client = state.client.clone();
    let outcome = state
        .blocking(move || {
            Ok(engine.answer(
                &session.case,
                &session.query,
                &req.question,
                &req.options,
                client.as_ref(),
                &req.params,
            )?)
        })
        .await?;
    Ok(Json(QaResponse {
        answer: outcome.answer,
        prompt_echo: outcome.prompt_echo,
        citations: outcome.package.citations,
    }))
}

async fn provenance(
    State(state): State<Arc<AppState>>,
    Path(unit_id): Path<String>,
) -> Result<Json<Provenance>, ApiError> {
    let engine = state.require_engine()?;
    engine.provenance(&unit_id).map(Json).map_err(|e| {
        ApiError::new(
            axum::http::StatusCode::NOT_FOUND,
            "UnitNotFound",
            "unknown text unit",
        )
        .with_detail(e.to_string())
    })
}
