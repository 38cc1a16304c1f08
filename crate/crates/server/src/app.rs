use std::net::SocketAddr;
use std::sync::Arc;

use axum::Router;
use ehr_core::platform::Platform;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use crate::config::ServerConfig;
use crate::error::ApiError;
use crate::gateway::{self, Gateway};
use crate::services;

#[derive(Clone)]
pub struct AppState {
    pub platform: Arc<Platform>,
}

impl AppState {
    /// Runs platform work on the blocking pool. Generator calls and durable
    /// audit appends may block.
    pub async fn run<T, F>(&self, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&Platform) -> ehr_core::Result<T> + Send + 'static,
    {
        let p = self.platform.clone();
        tokio::task::spawn_blocking(move || f(&p))
            .await
            .map_err(|e| ehr_core::Error::Internal(e.to_string()))?
            .map_err(ApiError::from)
    }
}

pub struct Deployment {
    pub platform: Arc<Platform>,
    pub gateway: Arc<Gateway>,
    pub router: Router,
}

/// Assembles the service routers behind the gateway.
pub fn build(platform: Arc<Platform>, config: &ServerConfig) -> Deployment {
    let state = AppState {
        platform: platform.clone(),
    };
    let gateway = Arc::new(Gateway::new(
        platform.clone(),
        config.rate_limits,
        config.trust_forwarded_for,
        services::upstreams(state, config.max_upload_bytes),
        config.max_upload_bytes,
    ));
    Deployment {
        platform,
        router: gateway::router(gateway.clone()),
        gateway,
    }
}

/// Serves `router` on `addr` in the background and returns the bound
/// address (useful with port 0).
pub async fn spawn(router: Router, addr: SocketAddr) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let handle = tokio::spawn(async move {
        let svc = router.into_make_service_with_connect_info::<SocketAddr>();
        if let Err(e) = axum::serve(listener, svc).await {
            tracing::error!("server stopped: {e}");
        }
    });
    Ok((local, handle))
}
