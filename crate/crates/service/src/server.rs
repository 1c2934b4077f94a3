//! Running the HTTP service.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use crate::config::ServiceConfig;
use crate::routes;
use crate::state::AppState;

/// Upper bound on how often idle sessions are swept.
const MAX_SWEEP_INTERVAL: Duration = Duration::from_secs(60);

/// Serves `router` on `listener` until `shutdown` resolves, then lets
/// in-flight requests finish.
pub async fn run(
    listener: TcpListener,
    router: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router).with_graceful_shutdown(shutdown).await
}

/// Periodically expires idle sessions and compasses.
pub fn spawn_sweeper(state: Arc<AppState>) -> tokio::task::JoinHandle<()> {
    let period = (state.ttl / 4).clamp(Duration::from_millis(10), MAX_SWEEP_INTERVAL);
    tokio::spawn(async move {
        let mut ticks = tokio::time::interval(period);
        ticks.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            ticks.tick().await;
            let expired = state.sweep();
            if expired > 0 {
                tracing::info!(expired, "expired idle sessions and compasses");
            }
        }
    })
}

async fn termination() {
    let ctrl_c = async {
        if let Err(e) = tokio::signal::ctrl_c().await {
            tracing::warn!("cannot listen for ctrl-c: {e}");
            std::future::pending::<()>().await;
        }
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(e) => {
                tracing::warn!("cannot listen for SIGTERM: {e}");
                std::future::pending::<()>().await;
            }
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    tracing::info!("shutting down");
}

/// The `serve` subcommand: runs until SIGINT or SIGTERM.
pub async fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    let setup = config.clone();
    let state = tokio::task::spawn_blocking(move || AppState::from_config(&setup)).await??;
    let state = Arc::new(state);
    let addr = config.listen_address();
    let listener = TcpListener::bind(addr).await.with_context(|| format!("cannot listen on {addr}"))?;
    tracing::info!(
        address = %listener.local_addr()?,
        backend = %config.backend,
        data_dir = %config.store.data_dir.display(),
        "serving"
    );
    let sweeper = spawn_sweeper(state.clone());
    let result = run(listener, routes::router(state), termination()).await;
    sweeper.abort();
    result.context("server failed")
}

/// A router served from a dedicated runtime thread; stopped on drop.
pub struct BackgroundServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl BackgroundServer {
    /// Binds `127.0.0.1` on a free port and serves `router` there.
    pub fn start(router: Router) -> anyhow::Result<Self> {
        Self::start_with(router, None)
    }

    /// Serves the full API over `state`, sweeping idle sessions.
    pub fn start_service(state: AppState) -> anyhow::Result<Self> {
        let state = Arc::new(state);
        Self::start_with(routes::router(state.clone()), Some(state))
    }

    fn start_with(router: Router, sweep: Option<Arc<AppState>>) -> anyhow::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        let listener = runtime.block_on(TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], 0))))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let sweeper = sweep.map(spawn_sweeper);
                let stop = async {
                    let _ = rx.await;
                };
                if let Err(e) = run(listener, router, stop).await {
                    tracing::warn!("background server failed: {e}");
                }
                if let Some(s) = sweeper {
                    s.abort();
                }
            });
        });
        Ok(Self { addr, shutdown: Some(tx), thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// `http://127.0.0.1:<port>`
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting connections and waits for in-flight requests.
    pub fn stop(mut self) {
        self.shutdown_now();
    }

    fn shutdown_now(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        self.shutdown_now();
    }
}
