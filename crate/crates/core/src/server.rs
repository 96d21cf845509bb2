//! HTTP front of the PSI coordinator.
//!
//! Plain HTTP; transport encryption is delegated to a TLS-terminating proxy
//! in deployment. Per-session state lives in memory, optionally snapshotted
//! to disk after phase transitions, and expires after an idle timeout.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tracing::{info, warn};

use crate::coordinator::{PartySpec, Phase, SessionConfig, SessionState};
use crate::error::{Error, ErrorCode, Result};
use crate::wire::{
    CreateSessionRequest, CreateSessionResponse, ErrorBody, FeatureResultsWire,
    PermutationsResponse, ResultsResponse, StatusResponse, SubmissionRequest, SubmissionResponse,
};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ServerConfig {
    pub listen_addr: String,
    /// Sessions idle longer than this are dropped; 0 disables expiry.
    pub idle_timeout_secs: u64,
    pub max_body_bytes: usize,
    /// When set, session state is written here after phase transitions and
    /// reloaded on startup.
    pub snapshot_dir: Option<PathBuf>,
    /// Optional shared token all requests must carry in `x-session-token`.
    pub shared_token: Option<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            listen_addr: "127.0.0.1:7380".to_string(),
            idle_timeout_secs: 3600,
            max_body_bytes: 64 << 20,
            snapshot_dir: None,
            shared_token: None,
        }
    }
}

impl ServerConfig {
    /// Loads a JSON config file, then applies environment overrides
    /// (SHAPCMI_LISTEN_ADDR, SHAPCMI_IDLE_TIMEOUT_SECS, SHAPCMI_MAX_BODY_BYTES,
    /// SHAPCMI_SNAPSHOT_DIR, SHAPCMI_SHARED_TOKEN).
    pub fn load(path: Option<&std::path::Path>) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("invalid config {}: {e}", p.display())))?
            }
            None => ServerConfig::default(),
        };
        if let Ok(v) = std::env::var("SHAPCMI_LISTEN_ADDR") {
            config.listen_addr = v;
        }
        if let Ok(v) = std::env::var("SHAPCMI_IDLE_TIMEOUT_SECS") {
            config.idle_timeout_secs = v
                .parse()
                .map_err(|e| Error::Config(format!("bad SHAPCMI_IDLE_TIMEOUT_SECS: {e}")))?;
        }
        if let Ok(v) = std::env::var("SHAPCMI_MAX_BODY_BYTES") {
            config.max_body_bytes = v
                .parse()
                .map_err(|e| Error::Config(format!("bad SHAPCMI_MAX_BODY_BYTES: {e}")))?;
        }
        if let Ok(v) = std::env::var("SHAPCMI_SNAPSHOT_DIR") {
            config.snapshot_dir = Some(PathBuf::from(v));
        }
        if let Ok(v) = std::env::var("SHAPCMI_SHARED_TOKEN") {
            config.shared_token = Some(v);
        }
        Ok(config)
    }
}

struct SessionEntry {
    state: Mutex<SessionState>,
    last_touched: Mutex<Instant>,
}

struct AppState {
    config: ServerConfig,
    sessions: Mutex<HashMap<String, Arc<SessionEntry>>>,
    next_session: AtomicU64,
}

impl AppState {
    fn sweep_expired(&self) {
        if self.config.idle_timeout_secs == 0 {
            return;
        }
        let timeout = Duration::from_secs(self.config.idle_timeout_secs);
        let mut sessions = self.sessions.lock().unwrap();
        sessions.retain(|id, entry| {
            let idle = entry.last_touched.lock().unwrap().elapsed();
            if idle > timeout {
                info!(session = %id, "expiring idle session");
                false
            } else {
                true
            }
        });
    }

    fn session(&self, id: &str) -> std::result::Result<Arc<SessionEntry>, ApiError> {
        self.sweep_expired();
        let sessions = self.sessions.lock().unwrap();
        let entry = sessions.get(id).cloned().ok_or_else(|| {
            ApiError::from(Error::protocol(
                ErrorCode::UnknownSession,
                format!("no session {id}"),
            ))
        })?;
        *entry.last_touched.lock().unwrap() = Instant::now();
        Ok(entry)
    }

    fn snapshot(&self, state: &SessionState) {
        let Some(dir) = &self.config.snapshot_dir else {
            return;
        };
        let path = dir.join(format!("{}.json", state.config.session_id));
        let write = || -> std::io::Result<()> {
            std::fs::create_dir_all(dir)?;
            let tmp = path.with_extension("json.tmp");
            std::fs::write(&tmp, serde_json::to_vec(state)?)?;
            std::fs::rename(&tmp, &path)
        };
        if let Err(e) = write() {
            warn!(session = %state.config.session_id, "snapshot failed: {e}");
        }
    }

    fn restore_snapshots(&self) {
        let Some(dir) = &self.config.snapshot_dir else {
            return;
        };
        let Ok(entries) = std::fs::read_dir(dir) else {
            return;
        };
        let mut sessions = self.sessions.lock().unwrap();
        let mut max_seq = 0u64;
        for entry in entries.flatten() {
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            match std::fs::read(&path).map_err(|e| e.to_string()).and_then(|bytes| {
                serde_json::from_slice::<SessionState>(&bytes).map_err(|e| e.to_string())
            }) {
                Ok(state) => {
                    let id = state.config.session_id.clone();
                    if let Some(seq) = id.strip_prefix('s').and_then(|s| s.parse::<u64>().ok()) {
                        max_seq = max_seq.max(seq);
                    }
                    info!(session = %id, "restored session snapshot");
                    sessions.insert(
                        id,
                        Arc::new(SessionEntry {
                            state: Mutex::new(state),
                            last_touched: Mutex::new(Instant::now()),
                        }),
                    );
                }
                Err(e) => warn!("skipping unreadable snapshot {}: {e}", path.display()),
            }
        }
        self.next_session.store(max_seq + 1, Ordering::SeqCst);
    }
}

struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::Protocol { code, .. } => {
                let status = match code {
                    ErrorCode::UnknownSession => StatusCode::NOT_FOUND,
                    ErrorCode::DuplicateSubmission
                    | ErrorCode::NotReady
                    | ErrorCode::NoOverlap => StatusCode::CONFLICT,
                    ErrorCode::MalformedGroups => StatusCode::BAD_REQUEST,
                    ErrorCode::UnauthorizedParty | ErrorCode::LabelFromDataParty => {
                        StatusCode::FORBIDDEN
                    }
                    ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
                };
                (status, *code)
            }
            Error::Config(_) | Error::Input(_) => {
                (StatusCode::BAD_REQUEST, ErrorCode::MalformedGroups)
            }
            _ => (StatusCode::INTERNAL_SERVER_ERROR, ErrorCode::Internal),
        };
        ApiError {
            status,
            body: ErrorBody {
                error_code: code,
                message: e.to_string(),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn check_token(state: &AppState, headers: &axum::http::HeaderMap) -> std::result::Result<(), ApiError> {
    if let Some(expected) = &state.config.shared_token {
        let supplied = headers
            .get("x-session-token")
            .and_then(|v| v.to_str().ok());
        if supplied != Some(expected.as_str()) {
            return Err(ApiError::from(Error::protocol(
                ErrorCode::UnauthorizedParty,
                "missing or invalid session token",
            )));
        }
    }
    Ok(())
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    headers: axum::http::HeaderMap,
    Json(req): Json<CreateSessionRequest>,
) -> std::result::Result<Json<CreateSessionResponse>, ApiError> {
    check_token(&app, &headers)?;
    app.sweep_expired();
    let seq = app.next_session.fetch_add(1, Ordering::SeqCst);
    let session_id = format!("s{seq}");
    let config = SessionConfig {
        session_id: session_id.clone(),
        expected_parties: req
            .expected_parties
            .into_iter()
            .map(|p| PartySpec {
                id: p.id,
                is_task_party: p.is_task_party,
            })
            .collect(),
        permutation_count: req.permutation_count,
        rng_seed: req.rng_seed,
        created_at: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        imported_permutations: req.permutations,
    };
    let state = SessionState::new(config)?;
    app.snapshot(&state);
    app.sessions.lock().unwrap().insert(
        session_id.clone(),
        Arc::new(SessionEntry {
            state: Mutex::new(state),
            last_touched: Mutex::new(Instant::now()),
        }),
    );
    info!(session = %session_id, "session created");
    Ok(Json(CreateSessionResponse { session_id }))
}

async fn submit(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: axum::http::HeaderMap,
    Json(req): Json<SubmissionRequest>,
) -> std::result::Result<Json<SubmissionResponse>, ApiError> {
    check_token(&app, &headers)?;
    let entry = app.session(&id)?;
    let mut groups = Vec::with_capacity(req.features.len());
    for f in req.features {
        groups.push(f.into_domain(&req.party_id).map_err(|e| {
            ApiError::from(Error::protocol(ErrorCode::MalformedGroups, e.to_string()))
        })?);
    }
    let remaining = {
        let mut state = entry.state.lock().unwrap();
        let remaining = state.accept_submission(&req.party_id, groups)?;
        app.snapshot(&state);
        remaining
    };
    info!(session = %id, party = %req.party_id, remaining, "submission accepted");
    if remaining == 0 {
        let app = Arc::clone(&app);
        let entry = Arc::clone(&entry);
        let id = id.clone();
        tokio::task::spawn_blocking(move || {
            let (config, submissions) = {
                let state = entry.state.lock().unwrap();
                (state.config.clone(), state.submissions.clone())
            };
            let outcome = crate::coordinator::compute_session(&config, &submissions);
            let mut state = entry.state.lock().unwrap();
            match outcome {
                Ok(outcome) => {
                    state.install_outcome(outcome);
                    info!(session = %id, "computation done");
                }
                Err(e) => {
                    let code = match &e {
                        Error::Protocol { code, .. } => *code,
                        _ => ErrorCode::Internal,
                    };
                    state.phase = Phase::Failed;
                    state.failure = Some((code, e.to_string()));
                    warn!(session = %id, "computation failed: {e}");
                }
            }
            app.snapshot(&state);
        });
    }
    Ok(Json(SubmissionResponse {
        accepted: true,
        parties_remaining: remaining,
    }))
}

async fn status(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: axum::http::HeaderMap,
) -> std::result::Result<Json<StatusResponse>, ApiError> {
    check_token(&app, &headers)?;
    let entry = app.session(&id)?;
    let state = entry.state.lock().unwrap();
    Ok(Json(StatusResponse {
        phase: state.phase,
        parties_remaining: state.parties_remaining(),
    }))
}

#[derive(serde::Deserialize)]
struct ResultsQuery {
    party: String,
}

async fn results(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ResultsQuery>,
    headers: axum::http::HeaderMap,
) -> std::result::Result<Json<ResultsResponse>, ApiError> {
    check_token(&app, &headers)?;
    let entry = app.session(&id)?;
    let state = entry.state.lock().unwrap();
    let (results, common_id_count) = state.fetch_results(&q.party)?;
    Ok(Json(ResultsResponse {
        common_id_count,
        features: results.iter().map(FeatureResultsWire::from_domain).collect(),
    }))
}

async fn permutations(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: axum::http::HeaderMap,
) -> std::result::Result<Json<PermutationsResponse>, ApiError> {
    check_token(&app, &headers)?;
    let entry = app.session(&id)?;
    let state = entry.state.lock().unwrap();
    if state.phase != Phase::Done {
        return Err(ApiError::from(Error::protocol(
            ErrorCode::NotReady,
            "permutations available once the session is done",
        )));
    }
    Ok(Json(PermutationsResponse {
        permutations: state.permutations.clone(),
    }))
}

fn router(app: Arc<AppState>) -> Router {
    let max_body = app.config.max_body_bytes;
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/submissions", post(submit))
        .route("/sessions/{id}/status", get(status))
        .route("/sessions/{id}/results", get(results))
        .route("/sessions/{id}/permutations", get(permutations))
        .layer(DefaultBodyLimit::max(max_body))
        .with_state(app)
}

/// Runs the coordinator until `shutdown` resolves (or forever).
pub async fn serve(
    config: ServerConfig,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<()> {
    let app = Arc::new(AppState {
        config,
        sessions: Mutex::new(HashMap::new()),
        next_session: AtomicU64::new(1),
    });
    app.restore_snapshots();
    info!(addr = %listener.local_addr()?, "coordinator listening");
    axum::serve(listener, router(app))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| Error::Transport(format!("server error: {e}")))
}

/// A coordinator running on a background thread, for the orchestrator and
/// for tests.
pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

pub fn start_in_background(config: ServerConfig) -> Result<ServerHandle> {
    let std_listener = std::net::TcpListener::bind(&config.listen_addr)
        .map_err(|e| Error::Config(format!("cannot bind {}: {e}", config.listen_addr)))?;
    std_listener.set_nonblocking(true)?;
    let addr = std_listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .expect("tokio runtime");
        runtime.block_on(async move {
            let listener =
                tokio::net::TcpListener::from_std(std_listener).expect("listener conversion");
            if let Err(e) = serve(config, listener, async {
                let _ = rx.await;
            })
            .await
            {
                warn!("coordinator exited with error: {e}");
            }
        });
    });
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
