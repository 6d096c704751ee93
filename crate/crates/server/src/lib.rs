//! HTTP service for audit sessions and the blinded model arena.
//!
//! [`bind`] validates the configuration, opens storage and binds the
//! listener; [`Bound::run`] serves until the shutdown future resolves, then
//! drains in-flight requests and stops the generation workers.

pub mod config;
pub mod error;
pub mod routes;

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::serve::ListenerExt;
use t2i_audit_core::Platform;
use thiserror::Error;
use tokio::net::TcpListener;

pub use config::ServiceConfig;
pub use error::{ApiError, ErrorEnvelope};
pub use routes::router;

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("{0}")]
    Runtime(String),
}

impl StartupError {
    /// 1 for configuration errors, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Bind { .. } | Self::Runtime(_) => 2,
        }
    }
}

pub struct Bound {
    listener: TcpListener,
    platform: Arc<Platform>,
    config: ServiceConfig,
}

impl Bound {
    pub fn local_addr(&self) -> SocketAddr {
        self.listener
            .local_addr()
            .expect("bound listener has an address")
    }

    pub fn platform(&self) -> Arc<Platform> {
        self.platform.clone()
    }

    pub async fn run<F>(self, shutdown: F) -> Result<(), StartupError>
    where
        F: Future<Output = ()> + Send + 'static,
    {
        let Bound {
            listener,
            platform,
            config,
        } = self;
        platform.start();
        let app = router(platform.clone(), config.cors_origin.as_deref());
        let housekeeping = tokio::spawn(housekeeping(
            platform.clone(),
            Duration::from_secs(config.housekeeping_interval_s),
        ));
        let listener = listener.tap_io(|tcp| {
            let _ = tcp.set_nodelay(true);
        });
        let served = axum::serve(listener, app)
            .with_graceful_shutdown(shutdown)
            .await;
        housekeeping.abort();
        let p = platform.clone();
        let _ = tokio::task::spawn_blocking(move || p.shutdown()).await;
        tracing::info!("shut down");
        served.map_err(|e| StartupError::Runtime(format!("server error: {e}")))
    }
}

async fn housekeeping(platform: Arc<Platform>, every: Duration) {
    let mut tick = tokio::time::interval(every);
    tick.tick().await;
    loop {
        tick.tick().await;
        let p = platform.clone();
        if let Ok((sessions, battles)) = tokio::task::spawn_blocking(move || p.housekeeping()).await
        {
            if sessions + battles > 0 {
                tracing::info!(sessions, battles, "expired idle state");
            }
        }
    }
}

/// Builds the platform and binds the listener without serving yet.
pub async fn bind(config: ServiceConfig) -> Result<Bound, StartupError> {
    let addr = config.socket_addr()?;
    let cfg = config.clone();
    let platform = tokio::task::spawn_blocking(move || cfg.build_platform())
        .await
        .map_err(|e| StartupError::Runtime(e.to_string()))??;
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|source| StartupError::Bind { addr, source })?;
    Ok(Bound {
        listener,
        platform: Arc::new(platform),
        config,
    })
}
