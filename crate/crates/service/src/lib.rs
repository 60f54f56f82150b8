//! Local HTTP+JSON service over a study directory. It serves stories,
//! reports, survey records and evaluation tables, and runs assessments as
//! background jobs polled by the client.

mod api;
mod jobs;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use deepquali_core::config::CliConfig;
use deepquali_core::engine::{BackendError, LlmBackend};
use deepquali_core::harness::{HarnessError, StudyDir};

pub use api::{ApiError, AssessmentRequest, ModelSelection, ParamsOverrides};
pub use jobs::{JobRecord, JobState, SHUTDOWN_ERROR};

use api::AppState;
use jobs::Jobs;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Study(#[from] HarnessError),
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("server failed: {0}")]
    Serve(#[source] std::io::Error),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Study(e) => e.code(),
            ServiceError::Bind { .. } => "bind",
            ServiceError::Backend(_) => "backend",
            ServiceError::Serve(_) => "serve",
        }
    }
}

/// A running service. Dropping it without calling [`shutdown`] leaves the
/// server running until the runtime stops.
///
/// [`shutdown`]: ServiceHandle::shutdown
pub struct ServiceHandle {
    addr: SocketAddr,
    state: AppState,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}/api", self.addr)
    }

    /// Stops accepting requests, fails unfinished jobs, and releases the
    /// study lock.
    pub async fn shutdown(mut self) -> Result<(), ServiceError> {
        self.state.abort_jobs();
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        let result = (&mut self.task).await;
        self.state.release();
        match result {
            Ok(r) => r.map_err(ServiceError::Serve),
            Err(e) => Err(ServiceError::Serve(std::io::Error::other(e))),
        }
    }

    /// Waits until the server stops on its own.
    pub async fn wait(mut self) -> Result<(), ServiceError> {
        let result = (&mut self.task).await;
        self.state.release();
        match result {
            Ok(r) => r.map_err(ServiceError::Serve),
            Err(e) => Err(ServiceError::Serve(std::io::Error::other(e))),
        }
    }
}

/// Locks the study directory, recovers job state, and starts listening on
/// `config.bind` (port 0 picks a free port).
pub async fn start(
    config: CliConfig,
    backend: Arc<dyn LlmBackend>,
) -> Result<ServiceHandle, ServiceError> {
    let study = StudyDir::open_writer(&config.study_dir)?;
    let jobs = Jobs::load(&study.jobs_dir())?;
    let listener = TcpListener::bind(&config.bind)
        .await
        .map_err(|source| ServiceError::Bind {
            addr: config.bind.clone(),
            source,
        })?;
    let addr = listener.local_addr().map_err(|source| ServiceError::Bind {
        addr: config.bind.clone(),
        source,
    })?;
    let root: PathBuf = study.root().to_owned();
    let state = AppState::new(root, study, config, backend, jobs);
    let app = api::router(state.clone());
    let (stop, stopped) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stopped.await;
            })
            .await
    });
    tracing::info!(%addr, "service listening");
    Ok(ServiceHandle {
        addr,
        state,
        stop: Some(stop),
        task,
    })
}

/// Builds the configured backend, starts the service, and runs until
/// Ctrl-C.
pub async fn serve(config: CliConfig, api_key: Option<String>) -> Result<(), ServiceError> {
    let backend = config.build_backend(api_key)?;
    let handle = start(config, backend).await?;
    eprintln!("listening on {}", handle.base_url());
    let _ = tokio::signal::ctrl_c().await;
    handle.shutdown().await
}
