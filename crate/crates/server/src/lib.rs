//! HTTP service, command-line interface and an S3-compatible test double
//! for the `xaistore` platform.

use std::sync::Arc;

use xaistore::platform::Platform;

pub mod api;
pub mod cli;
pub mod s3_double;

/// Serve the API on `listener` until Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, platform: Arc<Platform>) -> std::io::Result<()> {
    axum::serve(listener, api::router(platform))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
