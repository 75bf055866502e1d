//! Annotation service: sessions, live inference, annotation snapshots and
//! interaction event logs over HTTP+JSON.
//!
//! Persistence is flat files under the sessions directory (see [`store`]).
//! The HTTP layer is fully concurrent; inference runs on one worker per
//! loaded checkpoint and each session's writes go through that session's
//! exclusive region.

pub mod api;
pub mod error;
pub mod openapi;
pub mod state;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;

pub use api::router;
pub use error::{ApiError, ApiResult};
pub use state::{AppState, DatasetIndex, InferenceWorker, ServerConfig, ServerError, QUEUE_DEPTH};

/// Bind `0.0.0.0:port` and serve until Ctrl-C.
pub async fn serve(config: ServerConfig) -> Result<(), ServerError> {
    let port = config.port;
    let state = Arc::new(AppState::new(config)?);
    match &state.worker {
        Some(w) => log::info!("model {} loaded", w.version),
        None => log::warn!("no checkpoint given; /api/v1/infer will answer 503"),
    }
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| ServerError::Bind(port, e))?;
    log::info!(
        "serving dataset {:?} ({} classes) on http://{}",
        state.dataset.name,
        state.dataset.meta.classes.len(),
        listener.local_addr().map(|a| a.to_string()).unwrap_or_else(|_| addr.to_string())
    );
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        })
        .await
        .map_err(|e| ServerError::Bind(port, e))
}

/// [`serve`] on a fresh multi-threaded runtime.
pub fn serve_blocking(config: ServerConfig) -> Result<(), ServerError> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| ServerError::Io(config.sessions_dir.clone(), e))?;
    rt.block_on(serve(config))
}
