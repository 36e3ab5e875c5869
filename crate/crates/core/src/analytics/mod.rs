//! Per-camera visual analysis on rendered frames: color-segmentation
//! detection, IoU tracking with zone dwell, door-transition edges and a
//! fire-pixel score.

mod detect;
mod door;
mod tracker;

pub use detect::{
    detect, expected_area, fire_score, overlap_ratio, ZeroAreaDoor, FIRE_SATURATION_FRACTION,
    MIN_AREA,
};
pub use door::{door_edge, door_transitions, is_at_door, DEFAULT_DOOR_DELTA};
pub use tracker::{
    greedy_match, CrossCameraDetection, Track, TrackUpdate, Tracker, ZoneRegion,
    IOU_MATCH_THRESHOLD, RETIRE_AFTER_TICKS,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{DetectionSet, DoorTransitionEvent, TrackSummary};
use crate::geometry::PixelRect;
use crate::vdevices::Frame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraAnalyticsConfig {
    pub camera_id: String,
    /// Room the camera watches; attached to every track summary.
    pub room: Option<String>,
    pub door_id: Option<String>,
    pub door_box: Option<PixelRect>,
    pub delta: f64,
    pub zones: Vec<ZoneRegion>,
    pub min_area: i64,
}

impl CameraAnalyticsConfig {
    pub fn new(camera_id: &str) -> Self {
        Self {
            camera_id: camera_id.to_string(),
            room: None,
            door_id: None,
            door_box: None,
            delta: DEFAULT_DOOR_DELTA,
            zones: Vec::new(),
            min_area: MIN_AREA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error(transparent)]
    ZeroAreaDoor(#[from] ZeroAreaDoor),
    #[error("camera `{0}` has a door box but no door id")]
    DoorWithoutId(String),
    #[error("camera `{camera}`: door threshold {delta} is outside (0, 1)")]
    BadDelta { camera: String, delta: f64 },
    #[error(transparent)]
    CrossCamera(#[from] CrossCameraDetection),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameAnalysis {
    pub detections: DetectionSet,
    pub transitions: Vec<DoorTransitionEvent>,
}

/// Analysis state for one camera. Frames must arrive in tick order.
#[derive(Debug, Clone)]
pub struct CameraAnalytics {
    cfg: CameraAnalyticsConfig,
    tracker: Tracker,
    last_time: Option<f64>,
}

impl CameraAnalytics {
    pub fn new(cfg: CameraAnalyticsConfig) -> Result<Self, AnalyticsError> {
        if let Some(b) = cfg.door_box {
            if b.area() <= 0 {
                return Err(ZeroAreaDoor(b).into());
            }
            if cfg.door_id.is_none() {
                return Err(AnalyticsError::DoorWithoutId(cfg.camera_id.clone()));
            }
        }
        if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
            return Err(AnalyticsError::BadDelta {
                camera: cfg.camera_id.clone(),
                delta: cfg.delta,
            });
        }
        let tracker = Tracker::new(&cfg.camera_id);
        Ok(Self {
            cfg,
            tracker,
            last_time: None,
        })
    }

    pub fn config(&self) -> &CameraAnalyticsConfig {
        &self.cfg
    }

    pub fn tracker(&self) -> &Tracker {
        &self.tracker
    }

    pub fn process(&mut self, frame: &Frame) -> Result<FrameAnalysis, AnalyticsError> {
        let detections = detect(frame, self.cfg.min_area);
        let elapsed = self.last_time.map_or(0.0, |t| (frame.time - t).max(0.0));
        self.last_time = Some(frame.time);
        let update = self
            .tracker
            .update(&detections, frame.tick, elapsed, &self.cfg.zones)?;

        let mut transitions = Vec::new();
        if let (Some(door_box), Some(door_id)) = (self.cfg.door_box, self.cfg.door_id.as_ref()) {
            for id in door_transitions(
                &mut self.tracker,
                &update.assignments,
                &door_box,
                self.cfg.delta,
            )? {
                let track = self.tracker.track(id).expect("fired track is live");
                transitions.push(DoorTransitionEvent {
                    camera_id: self.cfg.camera_id.clone(),
                    door_id: door_id.clone(),
                    track_id: id,
                    time: frame.time,
                    tick: frame.tick,
                    class: track.class,
                });
            }
        }

        let mut tracks = Vec::with_capacity(update.assignments.len());
        for id in &update.assignments {
            let t = self.tracker.track(*id).expect("assigned track is live");
            tracks.push(TrackSummary {
                track_id: t.track_id,
                class: t.class,
                bbox: t.bbox,
                zone: t.zone(&self.cfg.zones).map(|z| z.zone_id.clone()),
                room: self.cfg.room.clone(),
                dwell: t.dwell.clone(),
            });
        }

        Ok(FrameAnalysis {
            detections: DetectionSet {
                camera_id: self.cfg.camera_id.clone(),
                tick: frame.tick,
                time: frame.time,
                detections,
                tracks,
                fire_score: fire_score(frame),
            },
            transitions,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vdevices::{class_color, BACKGROUND};
    use crate::world::AgentClass;

    fn frame(tick: u64, rects: &[PixelRect]) -> Frame {
        let mut f = Frame::filled("cam", tick, tick as f64 * 0.1, 200, 120, BACKGROUND);
        for r in rects {
            f.fill_rect(*r, class_color(AgentClass::Staff));
        }
        f
    }

    #[test]
    fn walk_through_door_emits_one_transition() {
        let mut cfg = CameraAnalyticsConfig::new("cam");
        cfg.door_id = Some("d1".into());
        cfg.door_box = Some(PixelRect::new(80, 20, 120, 100));
        cfg.room = Some("or".into());
        let mut a = CameraAnalytics::new(cfg).unwrap();
        let mut all = Vec::new();
        // Appear at the door, then slide right in 8 px steps.
        for (i, x) in (80..=176).step_by(8).enumerate() {
            let r = a
                .process(&frame(i as u64 + 1, &[PixelRect::new(x, 20, x + 24, 100)]))
                .unwrap();
            assert_eq!(r.detections.tracks.len(), 1);
            assert_eq!(r.detections.tracks[0].room.as_deref(), Some("or"));
            all.extend(r.transitions);
        }
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].door_id, "d1");
        assert_eq!(all[0].class, AgentClass::Staff);
    }

    #[test]
    fn config_is_validated() {
        let mut cfg = CameraAnalyticsConfig::new("cam");
        cfg.door_box = Some(PixelRect::new(0, 0, 0, 10));
        cfg.door_id = Some("d".into());
        assert!(CameraAnalytics::new(cfg.clone()).is_err());
        cfg.door_box = Some(PixelRect::new(0, 0, 10, 10));
        cfg.door_id = None;
        assert!(CameraAnalytics::new(cfg.clone()).is_err());
        cfg.door_id = Some("d".into());
        cfg.delta = 1.5;
        assert!(CameraAnalytics::new(cfg).is_err());
    }
}
