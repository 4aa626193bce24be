//! HTTP service around a shared [`Sage`] instance.

pub mod config;
pub mod routes;
pub mod sessions;

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::Router;
use sage_core::events::EventBus;
use sage_core::sage::{BuildError, Sage, SageOptions};
use thiserror::Error;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;
use tracing::{info, warn};

pub use config::{ConfigError, ServerConfig};
pub use routes::{router, HttpError};
pub use sessions::{Executor, SessionTable};

const EVENT_CAPACITY: usize = 1024;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot build the LLM backend: {0}")]
    Llm(#[from] sage_core::llm::LlmError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("server failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone)]
pub struct AppState {
    pub executor: Executor,
    pub config: Arc<ServerConfig>,
}

impl AppState {
    pub fn new(config: ServerConfig) -> Result<Self, ServeError> {
        let llm = config.llm.gateway()?;
        let options = SageOptions {
            state_dir: config.state_dir.clone(),
            seed_memories: config.seed_memories,
            embedder: None,
            events: Some(EventBus::new(EVENT_CAPACITY)),
        };
        let sage = Sage::load(&config.fixtures, llm, options)?;
        let executor = Executor::new(
            Arc::new(sage),
            config.max_sessions,
            Duration::from_secs(config.human_timeout_secs),
        );
        Ok(Self {
            executor,
            config: Arc::new(config),
        })
    }

    /// API routes, plus the static console when configured.
    pub fn app(&self) -> Router {
        let api = router(self.clone());
        match &self.config.static_dir {
            Some(dir) => api.fallback_service(ServeDir::new(dir)),
            None => api,
        }
    }

    /// Background trigger polling; `None` when disabled.
    pub fn spawn_poller(&self) -> Option<tokio::task::JoinHandle<()>> {
        if self.config.poll_interval_ms == 0 {
            return None;
        }
        let executor = self.executor.clone();
        let period = Duration::from_millis(self.config.poll_interval_ms);
        Some(tokio::spawn(async move {
            let mut interval = tokio::time::interval(period);
            interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            loop {
                interval.tick().await;
                let (report, sessions) = executor.poll_once().await;
                for (trigger, err) in &report.errors {
                    warn!(trigger = %trigger, error = %err, "trigger evaluation failed");
                }
                if !sessions.is_empty() {
                    info!(count = sessions.len(), "triggers fired");
                }
            }
        }))
    }
}

/// Binds an already-built app; returns the bound address and the serving future.
pub async fn bind(
    state: &AppState,
    addr: SocketAddr,
) -> Result<(SocketAddr, impl Future<Output = std::io::Result<()>> + use<>), ServeError> {
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|source| ServeError::Bind { addr, source })?;
    let local = listener.local_addr()?;
    let app = state.app();
    Ok((local, async move { axum::serve(listener, app).await }))
}

/// Runs until `shutdown` resolves.
pub async fn serve(config: ServerConfig, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), ServeError> {
    let addr = config.bind;
    let state = AppState::new(config)?;
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|source| ServeError::Bind { addr, source })?;
    info!(addr = %listener.local_addr()?, llm = %state.executor.sage().llm().backend_name(), "listening");
    let poller = state.spawn_poller();
    let result = axum::serve(listener, state.app()).with_graceful_shutdown(shutdown).await;
    if let Some(p) = poller {
        p.abort();
    }
    result.map_err(ServeError::from)
}
