//! Operator HTTP API and the `/api/alarm-stream` push feed.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, watch};

use crate::alarms::{AlarmFilter, AlarmStore, CommandError, Verb};
use crate::gateway::{PtzError, PtzForwarder};
use crate::hub::SimClock;
use crate::registry::{ConsoleEvent, Registry};

#[derive(Clone)]
pub struct ConsoleState {
    pub store: Arc<AlarmStore>,
    pub registry: Arc<Registry>,
    pub ptz: PtzForwarder,
    /// Base URL of the control server, e.g. `http://127.0.0.1:20001`.
    pub control_url: String,
    pub clock: SimClock,
    pub client: reqwest::Client,
    pub shutdown: watch::Receiver<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct CommandBody {
    pub operator: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionBody {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub value: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PtzBody {
    #[serde(default)]
    pub pan: f64,
    #[serde(default)]
    pub tilt: f64,
    pub zoom: Option<f64>,
}

pub fn router(state: ConsoleState) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/alarms", get(list_alarms))
        .route("/api/alarms/{id}", get(get_alarm))
        .route("/api/alarms/{id}/ack", post(ack))
        .route("/api/alarms/{id}/reject", post(reject))
        .route("/api/devices", get(devices))
        .route("/api/actions", post(action))
        .route("/api/cameras/{id}/ptz", post(ptz))
        .route("/api/alarm-stream", get(alarm_stream))
        .with_state(state)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    let body: BTreeMap<&str, String> = [("error", message.into())].into();
    (status, Json(body)).into_response()
}

async fn health(State(s): State<ConsoleState>) -> Response {
    Json(serde_json::json!({ "status": "ok", "sim_time": s.clock.now() })).into_response()
}

async fn list_alarms(
    State(s): State<ConsoleState>,
    Query(pairs): Query<Vec<(String, String)>>,
) -> Response {
    match AlarmFilter::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))) {
        Ok(f) => Json(s.store.query(&f)).into_response(),
        Err(e) => error(StatusCode::BAD_REQUEST, e.to_string()),
    }
}

async fn get_alarm(State(s): State<ConsoleState>, Path(id): Path<String>) -> Response {
    match s.store.get(&id) {
        Some(a) => Json(a).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown alarm `{id}`")),
    }
}

fn command(s: &ConsoleState, id: &str, verb: Verb, body: Option<Json<CommandBody>>) -> Response {
    let operator = body
        .and_then(|Json(b)| b.operator)
        .unwrap_or_else(|| "operator".to_string());
    match s.store.command(id, verb, &operator) {
        Ok(a) => Json(a).into_response(),
        Err(e @ CommandError::NotFound(_)) => error(StatusCode::NOT_FOUND, e.to_string()),
        Err(e @ CommandError::Illegal(_)) => error(StatusCode::CONFLICT, e.to_string()),
        Err(e @ CommandError::Bus(_)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn ack(
    State(s): State<ConsoleState>,
    Path(id): Path<String>,
    body: Option<Json<CommandBody>>,
) -> Response {
    command(&s, &id, Verb::Acknowledge, body)
}

async fn reject(
    State(s): State<ConsoleState>,
    Path(id): Path<String>,
    body: Option<Json<CommandBody>>,
) -> Response {
    command(&s, &id, Verb::Reject, body)
}

async fn devices(State(s): State<ConsoleState>) -> Response {
    Json(s.registry.devices()).into_response()
}

/// Relays to the control server and returns its status and body unchanged.
async fn action(State(s): State<ConsoleState>, Json(body): Json<ActionBody>) -> Response {
    let resp = s
        .client
        .get(format!("{}/action", s.control_url))
        .query(&[
            ("id", &body.id),
            ("name", &body.name),
            ("value", &body.value),
        ])
        .timeout(Duration::from_secs(5))
        .send()
        .await;
    match resp {
        Ok(r) => {
            let status =
                StatusCode::from_u16(r.status().as_u16()).unwrap_or(StatusCode::BAD_GATEWAY);
            match r.json::<serde_json::Value>().await {
                Ok(v) => (status, Json(v)).into_response(),
                Err(e) => error(StatusCode::BAD_GATEWAY, e.to_string()),
            }
        }
        Err(e) => error(
            StatusCode::BAD_GATEWAY,
            format!("control server unreachable: {e}"),
        ),
    }
}

async fn ptz(
    State(s): State<ConsoleState>,
    Path(id): Path<String>,
    Json(body): Json<PtzBody>,
) -> Response {
    match s.ptz.forward(&id, body.pan, body.tilt, body.zoom).await {
        Ok(ack) => Json(ack).into_response(),
        Err(e @ PtzError::UnknownCamera(_)) => error(StatusCode::NOT_FOUND, e.to_string()),
        Err(e @ PtzError::Rejected { .. }) => error(StatusCode::BAD_REQUEST, e.to_string()),
        Err(e @ PtzError::Unreachable { .. }) => error(StatusCode::BAD_GATEWAY, e.to_string()),
    }
}

async fn alarm_stream(State(s): State<ConsoleState>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| push(s, socket))
}

async fn push(s: ConsoleState, mut socket: WebSocket) {
    // Subscribe before taking the snapshot so nothing falls in between; a
    // duplicate is harmless because the console keys cards by alarm id.
    let mut live = s.registry.subscribe();
    let hello = ConsoleEvent::Hello {
        alarms: s.store.all(),
        sensors: s.registry.sensors(),
    };
    let mut shutdown = s.shutdown.clone();
    if send(&mut socket, &hello).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            ev = live.recv() => match ev {
                Ok(ev) => if send(&mut socket, &ev).await.is_err() { return },
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    tracing::warn!(missed = n, "console client lagging, closing");
                    break;
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
            _ = shutdown.changed() => break,
        }
    }
    let _ = socket.send(Message::Close(None)).await;
}

async fn send(socket: &mut WebSocket, ev: &ConsoleEvent) -> Result<(), ()> {
    let text = serde_json::to_string(ev).map_err(|_| ())?;
    socket
        .send(Message::Text(text.into()))
        .await
        .map_err(|_| ())
}
