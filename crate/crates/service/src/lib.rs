//! HTTP job service: dataset upload, asynchronous pipeline jobs, artifact
//! download and detection overlays.

pub mod datasets;
pub mod error;
pub mod jobs;
pub mod overlay;
mod routes;
pub mod state;
pub mod store;

use std::net::SocketAddr;

pub use error::{ApiError, ErrorBody};
pub use jobs::{JobKind, JobStatus, JobView};
pub use routes::router;
pub use state::{AppState, ServiceConfig};

/// Bind `addr` and serve until the process is stopped.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> std::io::Result<()> {
    let state = AppState::new(config)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
