//! HTTP API over a loaded model and template store.

use std::net::SocketAddr;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use gazeauth_core::auth::{verify_embedding, AuthError, Decision, DecisionPolicy};
use gazeauth_core::stimulus::{ScheduleParams, StimulusSchedule, ValidationReport};
use gazeauth_core::store::{StoreError, UserSummary};
use gazeauth_core::{AuthPipeline, Recording, Store};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

#[derive(Clone)]
pub struct AppState {
    pipeline: Arc<AuthPipeline>,
    store: Arc<RwLock<Store>>,
    policy: DecisionPolicy,
    started: Instant,
}

impl AppState {
    pub fn new(pipeline: AuthPipeline, store: Store, policy: DecisionPolicy) -> Self {
        Self {
            pipeline: Arc::new(pipeline),
            store: Arc::new(RwLock::new(store)),
            policy,
            started: Instant::now(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttemptRequest {
    pub name: String,
    pub recording: Recording,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollResponse {
    pub name: String,
    pub embedding_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyResponse {
    pub similarity: f64,
    pub decision: Decision,
    pub threshold: f64,
    pub embed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsersResponse {
    pub users: Vec<UserSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub model_id: String,
    pub model_rate_hz: f64,
    pub uptime_s: f64,
}

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ValidationReport>,
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: kind.to_string(),
                message: message.into(),
                report: None,
            },
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", r.body_text())
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        let message = e.to_string();
        match e {
            AuthError::NotFound(_) => Self::new(StatusCode::NOT_FOUND, "not_found", message),
            AuthError::ModelMismatch { .. } => Self::new(StatusCode::CONFLICT, "model_mismatch", message),
            AuthError::RecordingRejected(report) => {
                let mut err = Self::new(StatusCode::BAD_REQUEST, "recording_rejected", message);
                err.body.report = Some(report);
                err
            }
            AuthError::Store(StoreError::Validation(_)) | AuthError::Signal(_) | AuthError::Net(_) => {
                Self::new(StatusCode::BAD_REQUEST, "validation", message)
            }
            AuthError::Store(StoreError::Io { .. }) => Self::internal(message),
            _ => Self::new(StatusCode::BAD_REQUEST, "validation", message),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        AuthError::from(e).into()
    }
}

fn poisoned<T>(_: T) -> ApiError {
    ApiError::internal("template store lock poisoned")
}

async fn blocking<R: Send + 'static>(f: impl FnOnce() -> R + Send + 'static) -> Result<R, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))
}

async fn enroll(
    State(st): State<AppState>,
    body: Result<Json<AttemptRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<EnrollResponse>), ApiError> {
    let Json(req) = body?;
    let out = blocking(move || {
        let mut store = st.store.write().map_err(poisoned)?;
        st.pipeline.enroll(&mut store, &req.name, &req.recording).map_err(ApiError::from)
    })
    .await??;
    Ok((
        StatusCode::CREATED,
        Json(EnrollResponse {
            name: out.name,
            embedding_count: out.embedding_count,
        }),
    ))
}

async fn verify(
    State(st): State<AppState>,
    body: Result<Json<AttemptRequest>, JsonRejection>,
) -> Result<Json<VerifyResponse>, ApiError> {
    let Json(req) = body?;
    let (result, embed_ms) = blocking(move || {
        // Clone the record so enrollment is not blocked while the probe is
        // embedded.
        let record = st.store.read().map_err(poisoned)?.lookup(&req.name)?.clone();
        let start = Instant::now();
        let probe = st.pipeline.process_recording(&req.recording)?;
        let embed_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok::<_, ApiError>((verify_embedding(&record, &probe, &st.policy)?, embed_ms))
    })
    .await??;
    Ok(Json(VerifyResponse {
        similarity: result.similarity,
        decision: result.decision,
        threshold: result.threshold,
        embed_ms,
    }))
}

async fn list_users(State(st): State<AppState>) -> Result<Json<UsersResponse>, ApiError> {
    let users = st.store.read().map_err(poisoned)?.list_users();
    Ok(Json(UsersResponse { users }))
}

async fn delete_user(State(st): State<AppState>, Path(name): Path<String>) -> Result<StatusCode, ApiError> {
    blocking(move || st.store.write().map_err(poisoned)?.delete_user(&name).map_err(ApiError::from)).await??;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct StimulusQuery {
    seed: Option<u64>,
}

async fn stimulus(Query(q): Query<StimulusQuery>) -> Result<Json<StimulusSchedule>, ApiError> {
    let seed = q.seed.unwrap_or_else(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0)
    });
    let schedule = ScheduleParams::default()
        .generate(seed)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(schedule))
}

async fn health(State(st): State<AppState>) -> Json<HealthResponse> {
    Json(HealthResponse {
        model_id: st.pipeline.model_id().to_string(),
        model_rate_hz: st.pipeline.model().sample_rate_hz(),
        uptime_s: st.started.elapsed().as_secs_f64(),
    })
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/enroll", post(enroll))
        .route("/api/verify", post(verify))
        .route("/api/users", get(list_users))
        .route("/api/users/{name}", delete(delete_user))
        .route("/api/stimulus", get(stimulus))
        .route("/api/health", get(health))
        // Nine seconds of 2 kHz samples is well under this.
        .layer(axum::extract::DefaultBodyLimit::max(32 * 1024 * 1024))
        .with_state(state)
}

/// Binds `addr` and serves until the process exits.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    serve_on(TcpListener::bind(addr).await?, state).await
}

pub async fn serve_on(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Starts the service on a background thread with its own runtime and
/// returns the bound address. Port 0 picks a free port.
pub fn spawn(addr: SocketAddr, state: AppState) -> std::io::Result<SocketAddr> {
    let std_listener = std::net::TcpListener::bind(addr)?;
    std_listener.set_nonblocking(true)?;
    let bound = std_listener.local_addr()?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    std::thread::spawn(move || {
        rt.block_on(async move {
            let listener = TcpListener::from_std(std_listener).expect("listener registers with runtime");
            let _ = axum::serve(listener, router(state)).await;
        });
    });
    Ok(bound)
}
