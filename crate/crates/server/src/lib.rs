//! The cryptolab HTTP service.
//!
//! [`build_app`] turns a loaded [`AppState`] into an axum router; [`spawn`]
//! binds it to a socket in the background, which is what the binary and the
//! integration tests use.

pub mod accounts;
pub mod error;
pub mod routes;
pub mod state;
pub mod store;

use std::net::SocketAddr;

use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub use error::ApiError;
pub use state::{AppState, CoachMode, Config, StartupError};

pub fn build_app(state: AppState) -> Router {
    routes::router(state)
}

/// A server running on a background task.
pub struct Running {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl Running {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting connections and waits for in-flight requests.
    pub async fn stop(mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.task.await.unwrap_or_else(|e| Err(std::io::Error::other(e)))
    }
}

/// Loads state from `cfg` and serves it on `addr` (port 0 picks a free one).
pub async fn spawn(cfg: Config, addr: SocketAddr) -> anyhow::Result<Running> {
    let state = tokio::task::spawn_blocking(move || AppState::open(&cfg)).await??;
    serve(state, addr).await
}

pub async fn serve(state: AppState, addr: SocketAddr) -> anyhow::Result<Running> {
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = build_app(state);
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    tracing::info!(%addr, "listening");
    Ok(Running {
        addr,
        shutdown: Some(tx),
        task,
    })
}
