//! Network servers for the virtual devices, plus the shared bind/serve
//! plumbing used by every HTTP surface.

pub mod alarm_manager;
pub mod camera;
pub mod control;

use std::net::SocketAddr;

use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;

pub use alarm_manager::AlarmManager;
pub use camera::{CameraDevice, CameraInfo, GroundTruthRecord, PtzAck, STREAM_BOUNDARY};

#[derive(Debug, thiserror::Error)]
#[error("{module}: cannot bind {addr}: {source}")]
pub struct BindError {
    pub module: String,
    pub addr: SocketAddr,
    #[source]
    pub source: std::io::Error,
}

/// A running server task and the address it actually bound.
#[derive(Debug)]
pub struct Served {
    pub module: String,
    pub addr: SocketAddr,
    pub task: JoinHandle<()>,
}

pub async fn bind(module: &str, addr: SocketAddr) -> Result<TcpListener, BindError> {
    TcpListener::bind(addr).await.map_err(|source| BindError {
        module: module.to_string(),
        addr,
        source,
    })
}

/// Serves `app` until `shutdown` flips to true.
pub fn serve(
    module: &str,
    listener: TcpListener,
    app: Router,
    mut shutdown: watch::Receiver<bool>,
) -> Served {
    let addr = listener
        .local_addr()
        .expect("bound listener has an address");
    let name = module.to_string();
    let task = tokio::spawn(async move {
        let stop = async move {
            while !*shutdown.borrow() {
                if shutdown.changed().await.is_err() {
                    break;
                }
            }
        };
        if let Err(e) = axum::serve(listener, app)
            .with_graceful_shutdown(stop)
            .await
        {
            tracing::error!(module = %name, %e, "server stopped");
        }
    });
    Served {
        module: module.to_string(),
        addr,
        task,
    }
}
