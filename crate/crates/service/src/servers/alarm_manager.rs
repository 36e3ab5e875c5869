//! Sensor alarm manager: WebSocket `/notifications` sending a snapshot burst
//! on connect, then live state changes.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use tokio::sync::{broadcast, watch};
use vigil_core::vdevices::{ChangeNotifier, Readings, SensorBank, StateChangeNotification};
use vigil_core::world::WorldState;

const LIVE_BUFFER: usize = 4096;

#[derive(Debug)]
struct Inner {
    notifier: ChangeNotifier,
    current: Readings,
}

#[derive(Debug)]
pub struct AlarmManager {
    bank: SensorBank,
    inner: Mutex<Inner>,
    live: broadcast::Sender<StateChangeNotification>,
    /// Bumped to force every connection closed.
    generation: watch::Sender<u64>,
    connections: AtomicUsize,
}

impl AlarmManager {
    pub fn new(bank: SensorBank, initial: &WorldState) -> Self {
        let notifier = ChangeNotifier::new(&bank);
        let current = bank.read_all(initial);
        Self {
            bank,
            inner: Mutex::new(Inner { notifier, current }),
            live: broadcast::channel(LIVE_BUFFER).0,
            generation: watch::channel(0).0,
            connections: AtomicUsize::new(0),
        }
    }

    pub fn sensor_count(&self) -> usize {
        self.bank.specs().count()
    }

    pub fn connections(&self) -> usize {
        self.connections.load(Ordering::Relaxed)
    }

    /// Reads every sensor from `state` and broadcasts the changes.
    pub fn update(&self, state: &WorldState) -> Vec<StateChangeNotification> {
        let mut guard = self.inner.lock().expect("alarm manager poisoned");
        let inner = &mut *guard;
        let next = self.bank.read_all(state);
        let changes = inner.notifier.notify_changes(&inner.current, &next);
        inner.current = next;
        for n in &changes {
            // No receivers is fine: nobody is connected.
            let _ = self.live.send(n.clone());
        }
        changes
    }

    /// Current-state burst plus a live receiver, taken atomically so no
    /// change falls between them.
    pub fn attach(
        &self,
    ) -> (
        Vec<StateChangeNotification>,
        broadcast::Receiver<StateChangeNotification>,
    ) {
        let inner = self.inner.lock().expect("alarm manager poisoned");
        (
            inner.notifier.snapshot(&inner.current),
            self.live.subscribe(),
        )
    }

    /// Closes every open connection; clients are expected to reconnect.
    pub fn drop_connections(&self) {
        self.generation.send_modify(|g| *g += 1);
    }
}

pub fn router(mgr: Arc<AlarmManager>, shutdown: watch::Receiver<bool>) -> Router {
    Router::new()
        .route("/notifications", get(upgrade))
        .with_state((mgr, shutdown))
}

async fn upgrade(
    State((mgr, shutdown)): State<(Arc<AlarmManager>, watch::Receiver<bool>)>,
    ws: WebSocketUpgrade,
) -> Response {
    ws.on_upgrade(move |socket| serve(mgr, socket, shutdown))
}

async fn serve(mgr: Arc<AlarmManager>, mut socket: WebSocket, mut shutdown: watch::Receiver<bool>) {
    mgr.connections.fetch_add(1, Ordering::Relaxed);
    let mut kicked = mgr.generation.subscribe();
    let (burst, mut live) = mgr.attach();
    let result: Result<(), ()> = async {
        for n in burst {
            send(&mut socket, &n).await?;
        }
        loop {
            tokio::select! {
                msg = live.recv() => match msg {
                    Ok(n) => send(&mut socket, &n).await?,
                    // A lagging client is dropped; its reconnect resyncs state.
                    Err(_) => return Err(()),
                },
                incoming = socket.recv() => match incoming {
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return Ok(()),
                    Some(Ok(_)) => {}
                },
                _ = kicked.changed() => return Err(()),
                _ = shutdown.changed() => return Ok(()),
            }
        }
    }
    .await;
    if result.is_err() {
        tracing::debug!("alarm manager connection closed by server");
    }
    let _ = socket.send(Message::Close(None)).await;
    mgr.connections.fetch_sub(1, Ordering::Relaxed);
}

async fn send(socket: &mut WebSocket, n: &StateChangeNotification) -> Result<(), ()> {
    let text = serde_json::to_string(n).map_err(|_| ())?;
    socket
        .send(Message::Text(text.into()))
        .await
        .map_err(|_| ())
}
