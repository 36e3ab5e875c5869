//! Per-camera HTTP server: `/snapshot`, `/stream`, `/ptz`, `/ground_truth`.
//! Frames are rendered only inside request handlers, so a camera nobody
//! watches never renders.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::extract::{Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use bytes::Bytes;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;
use vigil_core::geometry::PixelRect;
use vigil_core::vdevices::{
    apply_ptz, render_frame, CameraView, Frame, GroundTruthBox, PtzCommand, PtzState,
};
use vigil_core::world::{FloorPlan, WorldState};

use crate::hub::SnapshotHub;
use crate::imaging::encode_png;

pub const STREAM_BOUNDARY: &str = "frame";

#[derive(Debug)]
pub struct CameraDevice {
    view: Mutex<CameraView>,
    plan: Arc<FloorPlan>,
    hub: Arc<SnapshotHub>,
    test_mode: bool,
    renders: AtomicU64,
    stream_clients: AtomicUsize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraInfo {
    pub camera_id: String,
    pub width: u32,
    pub height: u32,
    pub ptz: PtzState,
    pub door_box: Option<PixelRect>,
    pub renders: u64,
    pub stream_clients: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtzAck {
    pub camera_id: String,
    pub ptz: PtzState,
    pub hfov: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub camera_id: String,
    pub tick: u64,
    pub time: f64,
    pub boxes: Vec<GroundTruthBox>,
}

impl CameraDevice {
    pub fn new(
        view: CameraView,
        plan: Arc<FloorPlan>,
        hub: Arc<SnapshotHub>,
        test_mode: bool,
    ) -> Self {
        Self {
            view: Mutex::new(view),
            plan,
            hub,
            test_mode,
            renders: AtomicU64::new(0),
            stream_clients: AtomicUsize::new(0),
        }
    }

    pub fn camera_id(&self) -> String {
        self.view().camera_id
    }

    pub fn view(&self) -> CameraView {
        self.view.lock().expect("camera view poisoned").clone()
    }

    pub fn render_count(&self) -> u64 {
        self.renders.load(Ordering::Relaxed)
    }

    pub fn stream_clients(&self) -> usize {
        self.stream_clients.load(Ordering::Relaxed)
    }

    pub fn render(&self, state: &WorldState) -> Frame {
        self.renders.fetch_add(1, Ordering::Relaxed);
        render_frame(&self.view(), state, &self.plan)
    }

    pub fn ptz(&self, cmd: PtzCommand) -> PtzAck {
        let mut view = self.view.lock().expect("camera view poisoned");
        view.ptz = apply_ptz(view.ptz, cmd);
        PtzAck {
            camera_id: view.camera_id.clone(),
            ptz: view.ptz,
            hfov: view.hfov(),
        }
    }

    pub fn info(&self) -> CameraInfo {
        let v = self.view();
        CameraInfo {
            camera_id: v.camera_id,
            width: v.image_width,
            height: v.image_height,
            ptz: v.ptz,
            door_box: v.door_box,
            renders: self.render_count(),
            stream_clients: self.stream_clients(),
        }
    }

    fn snapshot_for(&self, tick: Option<u64>) -> Option<Arc<WorldState>> {
        match tick {
            Some(t) => self.hub.at_tick(t),
            None => Some(self.hub.latest()),
        }
    }
}

pub fn router(dev: Arc<CameraDevice>, shutdown: watch::Receiver<bool>) -> Router {
    Router::new()
        .route("/snapshot", get(snapshot))
        .route("/stream", get(stream))
        .route("/ptz", get(ptz))
        .route("/ground_truth", get(ground_truth))
        .route("/info", get(info))
        .with_state(Ctx { dev, shutdown })
}

#[derive(Clone)]
struct Ctx {
    dev: Arc<CameraDevice>,
    shutdown: watch::Receiver<bool>,
}

#[derive(Debug, Deserialize)]
struct TickQuery {
    tick: Option<u64>,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    let body: BTreeMap<&str, String> = [("error", message.into())].into();
    (status, Json(body)).into_response()
}

fn tick_headers(resp: &mut Response, frame: &Frame) {
    let h = resp.headers_mut();
    h.insert(
        "x-camera-id",
        HeaderValue::from_str(&frame.camera_id).unwrap_or(HeaderValue::from_static("")),
    );
    h.insert("x-tick", HeaderValue::from(frame.tick));
    if let Ok(v) = HeaderValue::from_str(&frame.time.to_string()) {
        h.insert("x-sim-time", v);
    }
}

async fn snapshot(State(ctx): State<Ctx>, Query(q): Query<TickQuery>) -> Response {
    let Some(state) = ctx.dev.snapshot_for(q.tick) else {
        return error(StatusCode::NOT_FOUND, "tick no longer retained");
    };
    let frame = ctx.dev.render(&state);
    match encode_png(&frame) {
        Ok(png) => {
            let mut resp = ([(header::CONTENT_TYPE, "image/png")], png).into_response();
            tick_headers(&mut resp, &frame);
            resp
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

/// Decrements the stream-client count when the response body is dropped.
struct StreamGuard(Arc<CameraDevice>);

impl StreamGuard {
    fn new(dev: Arc<CameraDevice>) -> Self {
        dev.stream_clients.fetch_add(1, Ordering::Relaxed);
        Self(dev)
    }
}

impl Drop for StreamGuard {
    fn drop(&mut self) {
        self.0.stream_clients.fetch_sub(1, Ordering::Relaxed);
    }
}

fn stream_part(frame: &Frame, png: &[u8]) -> Bytes {
    let head = format!(
        "--{STREAM_BOUNDARY}\r\nContent-Type: image/png\r\nContent-Length: {}\r\nX-Tick: {}\r\nX-Sim-Time: {}\r\n\r\n",
        png.len(),
        frame.tick,
        frame.time
    );
    let mut part = Vec::with_capacity(head.len() + png.len() + 2);
    part.extend_from_slice(head.as_bytes());
    part.extend_from_slice(png);
    part.extend_from_slice(b"\r\n");
    Bytes::from(part)
}

/// One part per published tick, starting with the current one.
async fn stream(State(ctx): State<Ctx>) -> Response {
    let snapshots = ctx.dev.hub.subscribe();
    let guard = StreamGuard::new(Arc::clone(&ctx.dev));
    let init = (snapshots, ctx.shutdown.clone(), guard, true);
    let parts = futures_util::stream::unfold(init, |(mut rx, mut stop, guard, first)| async move {
        if *stop.borrow() {
            return None;
        }
        if !first {
            tokio::select! {
                changed = rx.changed() => changed.ok()?,
                _ = stop.changed() => return None,
            }
        }
        let state = Arc::clone(&rx.borrow_and_update());
        let frame = guard.0.render(&state);
        let png = encode_png(&frame).ok()?;
        Some((
            Ok::<_, Infallible>(stream_part(&frame, &png)),
            (rx, stop, guard, false),
        ))
    });
    let mut resp = Response::new(Body::from_stream(parts));
    resp.headers_mut().insert(
        header::CONTENT_TYPE,
        HeaderValue::from_str(&format!(
            "multipart/x-mixed-replace; boundary={STREAM_BOUNDARY}"
        ))
        .expect("static header"),
    );
    resp.headers_mut()
        .insert(header::CACHE_CONTROL, HeaderValue::from_static("no-cache"));
    resp
}

#[derive(Debug, Deserialize)]
struct PtzQuery {
    pan: Option<f64>,
    tilt: Option<f64>,
    zoom: Option<f64>,
}

async fn ptz(State(ctx): State<Ctx>, Query(q): Query<PtzQuery>) -> Response {
    let current = ctx.dev.view().ptz;
    let cmd = PtzCommand {
        pan_delta: q.pan.unwrap_or(0.0),
        tilt_delta: q.tilt.unwrap_or(0.0),
        zoom: q.zoom.unwrap_or(current.zoom),
    };
    if ![cmd.pan_delta, cmd.tilt_delta, cmd.zoom]
        .iter()
        .all(|v| v.is_finite())
    {
        return error(StatusCode::BAD_REQUEST, "pan, tilt and zoom must be finite");
    }
    Json(ctx.dev.ptz(cmd)).into_response()
}

async fn ground_truth(State(ctx): State<Ctx>, Query(q): Query<TickQuery>) -> Response {
    if !ctx.dev.test_mode {
        return error(
            StatusCode::NOT_FOUND,
            "ground truth is only served in test mode",
        );
    }
    let Some(state) = ctx.dev.snapshot_for(q.tick) else {
        return error(StatusCode::NOT_FOUND, "tick no longer retained");
    };
    let frame = ctx.dev.render(&state);
    Json(GroundTruthRecord {
        camera_id: frame.camera_id,
        tick: frame.tick,
        time: frame.time,
        boxes: frame.ground_truth,
    })
    .into_response()
}

async fn info(State(ctx): State<Ctx>) -> Json<CameraInfo> {
    Json(ctx.dev.info())
}
