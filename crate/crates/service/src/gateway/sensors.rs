//! Sensor driver: a WebSocket client of the alarm manager that republishes
//! notifications on `events.sensor` and badge grants on `events.access`.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use futures_util::StreamExt;
use thiserror::Error;
use tokio::net::TcpStream;
use tokio::sync::watch;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};
use vigil_core::bus::{Broker, BusError};
use vigil_core::events::{
    AccessGranted, DeviceKind, DeviceLost, Payload, TOPIC_ACCESS, TOPIC_SENSOR,
};
use vigil_core::vdevices::{SensorKind, SensorValue, StateChangeNotification};

use super::backoff::{Backoff, Clock, LOST_AFTER_FAILURES};
use crate::hub::SimClock;
use crate::registry::Registry;

pub const SENSOR_MANAGER_ID: &str = "alarm-manager";

type Socket = WebSocketStream<MaybeTlsStream<TcpStream>>;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("connect to {url}: {message}")]
    Connect { url: String, message: String },
    #[error("not connected")]
    NotConnected,
    #[error("connection closed")]
    Closed,
    #[error("websocket: {0}")]
    Socket(String),
    #[error("timed out after {0:?} waiting for sensor messages")]
    Timeout(Duration),
    #[error(transparent)]
    Bus(#[from] BusError),
}

pub struct SensorIngest {
    url: String,
    broker: Broker,
    registry: Arc<Registry>,
    /// door_access sensor → door.
    doors: BTreeMap<String, String>,
    socket: Option<Socket>,
    backoff: Backoff,
    lost_reported: bool,
    last_seq: BTreeMap<String, u64>,
}

impl std::fmt::Debug for SensorIngest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SensorIngest")
            .field("url", &self.url)
            .field("connected", &self.socket.is_some())
            .finish_non_exhaustive()
    }
}

impl SensorIngest {
    pub fn new(
        url: String,
        broker: Broker,
        registry: Arc<Registry>,
        doors: BTreeMap<String, String>,
    ) -> Self {
        Self {
            url,
            broker,
            registry,
            doors,
            socket: None,
            backoff: Backoff::default(),
            lost_reported: false,
            last_seq: BTreeMap::new(),
        }
    }

    pub fn is_connected(&self) -> bool {
        self.socket.is_some()
    }

    pub fn failures(&self) -> u32 {
        self.backoff.failures()
    }

    /// One connection attempt. On failure returns the retry delay after
    /// recording the failure (and a device-lost event at the limit).
    pub async fn connect(&mut self, now: f64) -> Result<(), (LinkError, Duration)> {
        match connect_async(self.url.as_str()).await {
            Ok((socket, _)) => {
                self.socket = Some(socket);
                self.backoff.success();
                self.lost_reported = false;
                self.registry.set_sensor_link(true);
                Ok(())
            }
            Err(e) => {
                let err = LinkError::Connect {
                    url: self.url.clone(),
                    message: e.to_string(),
                };
                let delay = self
                    .link_failed(&err, now)
                    .map_err(|b| (b, Duration::ZERO))?;
                Err((err, delay))
            }
        }
    }

    /// Drops the connection and records a failure; returns the retry delay.
    pub fn link_failed(&mut self, err: &LinkError, now: f64) -> Result<Duration, LinkError> {
        self.socket = None;
        self.registry.set_sensor_link(false);
        let delay = self.backoff.failure();
        if self.backoff.failures() >= LOST_AFTER_FAILURES && !self.lost_reported {
            self.broker.publish(
                TOPIC_SENSOR,
                SENSOR_MANAGER_ID,
                now,
                Payload::DeviceLost(DeviceLost {
                    device_id: SENSOR_MANAGER_ID.to_string(),
                    device: DeviceKind::SensorManager,
                    failures: self.backoff.failures(),
                    time: now,
                    reason: err.to_string(),
                }),
            )?;
            self.lost_reported = true;
            tracing::warn!(url = %self.url, "sensor manager lost");
        }
        Ok(delay)
    }

    /// Reads exactly `n` messages (lockstep mode).
    pub async fn read_exact(&mut self, n: usize, timeout: Duration) -> Result<(), LinkError> {
        for _ in 0..n {
            let socket = self.socket.as_mut().ok_or(LinkError::NotConnected)?;
            let msg = tokio::time::timeout(timeout, socket.next())
                .await
                .map_err(|_| LinkError::Timeout(timeout))?;
            match msg {
                Some(Ok(Message::Text(text))) => self.handle_text(text.as_str())?,
                Some(Ok(Message::Close(_))) | None => {
                    self.socket = None;
                    return Err(LinkError::Closed);
                }
                Some(Ok(_)) => self.registry.count_malformed(),
                Some(Err(e)) => {
                    self.socket = None;
                    return Err(LinkError::Socket(e.to_string()));
                }
            }
        }
        Ok(())
    }

    /// Parses and republishes one message; malformed text is counted and skipped.
    pub fn handle_text(&mut self, text: &str) -> Result<(), BusError> {
        let n: StateChangeNotification = match serde_json::from_str(text) {
            Ok(n) => n,
            Err(e) => {
                tracing::warn!(%e, "malformed sensor message skipped");
                self.registry.count_malformed();
                return Ok(());
            }
        };
        if !n.snapshot {
            let expected = self.last_seq.get(&n.sensor_id).map_or(1, |s| s + 1);
            if n.seq != expected {
                tracing::warn!(sensor = %n.sensor_id, expected, got = n.seq, "sensor sequence gap");
                self.registry.count_seq_gap();
            }
        }
        self.last_seq.insert(n.sensor_id.clone(), n.seq);
        self.broker.publish(
            TOPIC_SENSOR,
            &n.sensor_id,
            n.time,
            Payload::SensorChange(n.clone()),
        )?;
        if let (SensorKind::DoorAccess, false, SensorValue::Access(grant)) =
            (n.kind, n.snapshot, &n.new_value)
        {
            match self.doors.get(&n.sensor_id) {
                Some(door) => {
                    self.broker.publish(
                        TOPIC_ACCESS,
                        door,
                        n.time,
                        Payload::AccessGranted(AccessGranted {
                            door_id: door.clone(),
                            sensor_id: n.sensor_id.clone(),
                            credential: grant.credential.clone(),
                            grant_seq: grant.seq,
                            time: n.time,
                        }),
                    )?;
                }
                None => tracing::warn!(sensor = %n.sensor_id, "grant from a sensor with no door"),
            }
        }
        self.registry.record_sensor(&n);
        Ok(())
    }

    /// Free-running worker for realtime mode: connect, consume, reconnect.
    pub async fn run(
        mut self,
        clock: Arc<dyn Clock>,
        sim: SimClock,
        mut shutdown: watch::Receiver<bool>,
    ) -> Result<(), LinkError> {
        while !*shutdown.borrow() {
            if self.socket.is_none() {
                if let Err((e, delay)) = self.connect(sim.now()).await {
                    tracing::debug!(%e, ?delay, "sensor manager connect failed");
                    tokio::select! {
                        _ = clock.sleep(delay) => {}
                        _ = shutdown.changed() => break,
                    }
                    continue;
                }
            }
            let socket = self.socket.as_mut().expect("connected above");
            let msg = tokio::select! {
                m = socket.next() => m,
                _ = shutdown.changed() => break,
            };
            let failure = match msg {
                Some(Ok(Message::Text(text))) => {
                    self.handle_text(text.as_str())?;
                    None
                }
                Some(Ok(Message::Close(_))) | None => Some(LinkError::Closed),
                Some(Ok(_)) => None,
                Some(Err(e)) => Some(LinkError::Socket(e.to_string())),
            };
            if let Some(e) = failure {
                let delay = self.link_failed(&e, sim.now())?;
                tracing::info!(%e, ?delay, "sensor link dropped, reconnecting");
                tokio::select! {
                    _ = clock.sleep(delay) => {}
                    _ = shutdown.changed() => break,
                }
            }
        }
        if let Some(mut s) = self.socket.take() {
            let _ = s.close(None).await;
        }
        Ok(())
    }
}
