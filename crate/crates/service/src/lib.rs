//! HTTP service over the subpopulation engine.
//!
//! Sessions live in memory. Each holds an attribution matrix, the current
//! partition with its layout and rankings, and a shared selection. Writes to
//! a session are serialized; reads see either the state before or after a
//! write. Pipeline runs that outlast [`ServiceConfig::job_threshold`] answer
//! `202` with a job handle to poll.

mod error;
mod routes;
mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::Router;
use parking_lot::Mutex;
use tokio::net::TcpListener;
use tokio::sync::RwLock;

pub use error::{ApiError, ApiResult};
pub use session::{
    Analysis, HistogramPayload, LayoutPayload, MatrixSnapshot, PartitionPayload, PartitionSnapshot,
    PipelineStatus, SelectedInstances, SelectedRow, Session, SessionSnapshot, SessionSummary,
};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Pipeline calls still running after this long return a job handle.
    pub job_threshold: Duration,
    /// Where `POST /sessions/{id}/snapshot` writes; disabled when `None`.
    pub snapshot_dir: Option<PathBuf>,
    /// Static files served at `/` (a built UI bundle), if any.
    pub ui_dir: Option<PathBuf>,
    pub body_limit: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            job_threshold: Duration::from_secs(1),
            snapshot_dir: None,
            ui_dir: None,
            body_limit: 512 * 1024 * 1024,
        }
    }
}

pub(crate) type SessionCell = Arc<RwLock<Session>>;

#[derive(Debug, Clone, serde::Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub(crate) enum JobState {
    Running,
    Done { result: PipelineStatus },
    Failed {
        code: u16,
        #[serde(flatten)]
        error: ApiError,
    },
}

pub(crate) struct Job {
    pub session: String,
    pub state: JobState,
}

pub(crate) struct Inner {
    pub config: ServiceConfig,
    pub sessions: parking_lot::RwLock<HashMap<String, SessionCell>>,
    pub jobs: Mutex<HashMap<String, Job>>,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct AppState(pub(crate) Arc<Inner>);

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self(Arc::new(Inner {
            config,
            sessions: parking_lot::RwLock::new(HashMap::new()),
            jobs: Mutex::new(HashMap::new()),
        }))
    }

    pub(crate) fn session(&self, id: &str) -> ApiResult<SessionCell> {
        self.0
            .sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(ApiError::no_session)
    }

    pub(crate) fn insert(&self, session: Session) -> String {
        let id = session.id.clone();
        self.0
            .sessions
            .write()
            .insert(id.clone(), Arc::new(RwLock::new(session)));
        id
    }
}

/// The service router for `state`.
pub fn router(state: AppState) -> Router {
    routes::build(state)
}

/// Serves on `listener` until ctrl-c.
pub async fn serve(listener: TcpListener, config: ServiceConfig) -> std::io::Result<()> {
    let app = router(AppState::new(config));
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Binds `addr` and serves on it.
pub async fn serve_on(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    serve(listener, config).await
}
