//! Camera driver: pulls frames over HTTP, runs per-camera analytics and
//! publishes frame metadata, detections and door transitions.

use std::sync::Arc;
use std::time::Duration;

use futures_util::StreamExt;
use thiserror::Error;
use tokio::sync::watch;
use vigil_core::analytics::{AnalyticsError, CameraAnalytics};
use vigil_core::bus::{Broker, BusError};
use vigil_core::events::{
    detections_topic, frames_topic, DeviceKind, DeviceLost, FrameMeta, Payload, TOPIC_DOOR,
};
use vigil_core::vdevices::Frame;

use super::backoff::{Backoff, Clock, LOST_AFTER_FAILURES};
use super::multipart::{MultipartError, MultipartParser};
use crate::config::IngestMode;
use crate::hub::SimClock;
use crate::imaging::{decode_png, ImageError};
use crate::registry::Registry;
use crate::servers::STREAM_BOUNDARY;

/// A fetch that did not yield a frame. Becomes a retry, never an error.
#[derive(Debug, Error)]
pub enum FetchError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("camera answered {0}")]
    Status(reqwest::StatusCode),
    #[error("missing or malformed {0} header")]
    Header(&'static str),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Multipart(#[from] MultipartError),
    #[error("stream ended")]
    StreamEnded,
}

/// Failures that stop the worker: the pipeline behind it is broken.
#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum FetchOutcome {
    Published {
        tick: u64,
        all_black: bool,
    },
    /// The camera served a tick already processed.
    Stale {
        tick: u64,
    },
    Failed {
        failures: u32,
        retry_in: Duration,
        reported_lost: bool,
        reason: String,
    },
}

pub struct CameraIngest {
    camera_id: String,
    base_url: String,
    fps: f64,
    client: reqwest::Client,
    analytics: CameraAnalytics,
    broker: Broker,
    registry: Arc<Registry>,
    backoff: Backoff,
    lost_reported: bool,
    last_tick: Option<u64>,
}

impl std::fmt::Debug for CameraIngest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CameraIngest")
            .field("camera_id", &self.camera_id)
            .field("base_url", &self.base_url)
            .field("last_tick", &self.last_tick)
            .finish_non_exhaustive()
    }
}

impl CameraIngest {
    pub fn new(
        base_url: String,
        fps: f64,
        analytics: CameraAnalytics,
        broker: Broker,
        registry: Arc<Registry>,
    ) -> Self {
        Self {
            camera_id: analytics.config().camera_id.clone(),
            base_url,
            fps,
            client: reqwest::Client::builder()
                .timeout(Duration::from_secs(5))
                .build()
                .expect("http client"),
            analytics,
            broker,
            registry,
            backoff: Backoff::default(),
            lost_reported: false,
            last_tick: None,
        }
    }

    pub fn camera_id(&self) -> &str {
        &self.camera_id
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn failures(&self) -> u32 {
        self.backoff.failures()
    }

    /// Fetches `/snapshot` (a specific tick when given) and publishes it.
    /// `now` stamps a device-lost event if this failure crosses the limit.
    pub async fn fetch_once(
        &mut self,
        tick: Option<u64>,
        now: f64,
    ) -> Result<FetchOutcome, IngestError> {
        match self.fetch(tick).await {
            Ok((frame, size)) => self.accept(frame, size),
            Err(e) => self.fail(&e, now),
        }
    }

    pub async fn fetch(&self, tick: Option<u64>) -> Result<(Frame, u64), FetchError> {
        let mut req = self.client.get(format!("{}/snapshot", self.base_url));
        if let Some(t) = tick {
            req = req.query(&[("tick", t)]);
        }
        let resp = req.send().await?;
        if !resp.status().is_success() {
            return Err(FetchError::Status(resp.status()));
        }
        let header = |name: &'static str| -> Result<String, FetchError> {
            resp.headers()
                .get(name)
                .and_then(|v| v.to_str().ok())
                .map(str::to_string)
                .ok_or(FetchError::Header(name))
        };
        let tick: u64 = header("x-tick")?
            .parse()
            .map_err(|_| FetchError::Header("x-tick"))?;
        let time: f64 = header("x-sim-time")?
            .parse()
            .map_err(|_| FetchError::Header("x-sim-time"))?;
        let body = resp.bytes().await?;
        let frame = decode_png(&body, &self.camera_id, tick, time)?;
        Ok((frame, body.len() as u64))
    }

    pub fn fail(&mut self, e: &FetchError, now: f64) -> Result<FetchOutcome, IngestError> {
        let retry_in = self.backoff.failure();
        let failures = self.backoff.failures();
        tracing::debug!(camera = %self.camera_id, failures, %e, "frame fetch failed");
        let mut reported_lost = false;
        if failures >= LOST_AFTER_FAILURES && !self.lost_reported {
            self.broker.publish(
                &frames_topic(&self.camera_id),
                &self.camera_id,
                now,
                Payload::DeviceLost(DeviceLost {
                    device_id: self.camera_id.clone(),
                    device: DeviceKind::Camera,
                    failures,
                    time: now,
                    reason: e.to_string(),
                }),
            )?;
            self.lost_reported = true;
            reported_lost = true;
            tracing::warn!(camera = %self.camera_id, failures, "camera lost");
        }
        self.registry.update_camera(&self.camera_id, |c| {
            c.failures = failures;
            c.lost = self.lost_reported;
        });
        Ok(FetchOutcome::Failed {
            failures,
            retry_in,
            reported_lost,
            reason: e.to_string(),
        })
    }

    /// Publishes metadata, detections and door transitions for one frame.
    pub fn accept(&mut self, frame: Frame, byte_size: u64) -> Result<FetchOutcome, IngestError> {
        self.backoff.success();
        self.lost_reported = false;
        if self.last_tick.is_some_and(|t| frame.tick <= t) {
            return Ok(FetchOutcome::Stale { tick: frame.tick });
        }
        self.last_tick = Some(frame.tick);
        let all_black = frame.is_all_black();
        let key = self.camera_id.clone();
        self.broker.publish(
            &frames_topic(&key),
            &key,
            frame.time,
            Payload::FrameMeta(FrameMeta {
                camera_id: key.clone(),
                tick: frame.tick,
                time: frame.time,
                byte_size,
                all_black,
            }),
        )?;
        let analysis = self.analytics.process(&frame)?;
        self.broker.publish(
            &detections_topic(&key),
            &key,
            frame.time,
            Payload::DetectionSet(analysis.detections),
        )?;
        for t in analysis.transitions {
            self.broker.publish(
                TOPIC_DOOR,
                &t.door_id.clone(),
                t.time,
                Payload::DoorTransition(t),
            )?;
        }
        self.registry.update_camera(&key, |c| {
            c.last_tick = Some(frame.tick);
            c.last_frame_time = Some(frame.time);
            c.all_black = all_black;
            c.lost = false;
            c.failures = 0;
        });
        Ok(FetchOutcome::Published {
            tick: frame.tick,
            all_black,
        })
    }

    /// Consumes `/stream` until it fails or `shutdown` fires.
    async fn consume_stream(
        &mut self,
        sim: &SimClock,
        shutdown: &mut watch::Receiver<bool>,
    ) -> Result<FetchOutcome, IngestError> {
        let resp = match self
            .client
            .get(format!("{}/stream", self.base_url))
            .timeout(Duration::MAX)
            .send()
            .await
        {
            Ok(r) if r.status().is_success() => r,
            Ok(r) => return self.fail(&FetchError::Status(r.status()), sim.now()),
            Err(e) => return self.fail(&FetchError::Http(e), sim.now()),
        };
        let mut body = resp.bytes_stream();
        let mut parser = MultipartParser::new(STREAM_BOUNDARY);
        loop {
            let chunk = tokio::select! {
                c = body.next() => c,
                _ = shutdown.changed() => return Ok(FetchOutcome::Stale { tick: self.last_tick.unwrap_or(0) }),
            };
            let chunk = match chunk {
                Some(Ok(c)) => c,
                Some(Err(e)) => return self.fail(&FetchError::Http(e), sim.now()),
                None => return self.fail(&FetchError::StreamEnded, sim.now()),
            };
            parser.feed(&chunk);
            loop {
                let part = match parser.next_part() {
                    Ok(Some(p)) => p,
                    Ok(None) => break,
                    Err(e) => return self.fail(&FetchError::Multipart(e), sim.now()),
                };
                let (Some(tick), Some(time)) = (part.tick, part.time) else {
                    return self.fail(&FetchError::Header("x-tick"), sim.now());
                };
                match decode_png(&part.body, &self.camera_id, tick, time) {
                    Ok(frame) => {
                        self.accept(frame, part.body.len() as u64)?;
                    }
                    Err(e) => return self.fail(&FetchError::Image(e), sim.now()),
                }
            }
        }
    }

    /// Free-running worker for realtime mode.
    pub async fn run(
        mut self,
        mode: IngestMode,
        clock: Arc<dyn Clock>,
        sim: SimClock,
        mut shutdown: watch::Receiver<bool>,
    ) -> Result<(), IngestError> {
        let period = Duration::from_secs_f64(1.0 / self.fps);
        while !*shutdown.borrow() {
            let outcome = match mode {
                IngestMode::Snapshot => self.fetch_once(None, sim.now()).await?,
                IngestMode::Stream => self.consume_stream(&sim, &mut shutdown).await?,
            };
            let wait = match outcome {
                FetchOutcome::Failed { retry_in, .. } => retry_in,
                _ => period,
            };
            tokio::select! {
                _ = clock.sleep(wait) => {}
                _ = shutdown.changed() => break,
            }
        }
        Ok(())
    }
}
