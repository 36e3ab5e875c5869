//! Typed payloads carried on broker topics.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::alarm::{Alarm, AlarmUpdate};
use crate::geometry::PixelRect;
use crate::vdevices::StateChangeNotification;
use crate::world::AgentClass;

pub const TOPIC_DOOR: &str = "events.door";
pub const TOPIC_SENSOR: &str = "events.sensor";
pub const TOPIC_ACCESS: &str = "events.access";
pub const TOPIC_ALARMS: &str = "alarms";

pub fn frames_topic(camera_id: &str) -> String {
    format!("frames.{camera_id}")
}

pub fn detections_topic(camera_id: &str) -> String {
    format!("detections.{camera_id}")
}

/// Per-frame metadata published by the gateway; pixels stay out of the broker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub camera_id: String,
    pub tick: u64,
    pub time: f64,
    pub byte_size: u64,
    pub all_black: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Camera,
    SensorManager,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceLost {
    pub device_id: String,
    pub device: DeviceKind,
    pub failures: u32,
    pub time: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: PixelRect,
    pub class: AgentClass,
    pub confidence: f64,
    pub camera_id: String,
    pub tick: u64,
}

/// A live track as seen on one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub track_id: u64,
    pub class: AgentClass,
    pub bbox: PixelRect,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zone: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room: Option<String>,
    /// Seconds accumulated per zone id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub dwell: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub camera_id: String,
    pub tick: u64,
    pub time: f64,
    pub detections: Vec<Detection>,
    /// Tracks matched on this frame.
    pub tracks: Vec<TrackSummary>,
    pub fire_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoorTransitionEvent {
    pub camera_id: String,
    pub door_id: String,
    pub track_id: u64,
    pub time: f64,
    pub tick: u64,
    pub class: AgentClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessGranted {
    pub door_id: String,
    pub sensor_id: String,
    pub credential: String,
    pub grant_seq: u64,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "snake_case")]
pub enum Payload {
    FrameMeta(FrameMeta),
    DeviceLost(DeviceLost),
    DetectionSet(DetectionSet),
    DoorTransition(DoorTransitionEvent),
    SensorChange(StateChangeNotification),
    AccessGranted(AccessGranted),
    Alarm(Alarm),
    AlarmUpdate(AlarmUpdate),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PayloadKind {
    FrameMeta,
    DeviceLost,
    DetectionSet,
    DoorTransition,
    SensorChange,
    AccessGranted,
    Alarm,
    AlarmUpdate,
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::FrameMeta(_) => PayloadKind::FrameMeta,
            Payload::DeviceLost(_) => PayloadKind::DeviceLost,
            Payload::DetectionSet(_) => PayloadKind::DetectionSet,
            Payload::DoorTransition(_) => PayloadKind::DoorTransition,
            Payload::SensorChange(_) => PayloadKind::SensorChange,
            Payload::AccessGranted(_) => PayloadKind::AccessGranted,
            Payload::Alarm(_) => PayloadKind::Alarm,
            Payload::AlarmUpdate(_) => PayloadKind::AlarmUpdate,
        }
    }
}

/// Payload kinds a topic accepts, or `None` for an undeclared topic.
pub fn topic_schema(topic: &str) -> Option<&'static [PayloadKind]> {
    use PayloadKind::*;
    if topic
        .strip_prefix("frames.")
        .is_some_and(|id| !id.is_empty())
    {
        return Some(&[FrameMeta, DeviceLost]);
    }
    if topic
        .strip_prefix("detections.")
        .is_some_and(|id| !id.is_empty())
    {
        return Some(&[DetectionSet]);
    }
    match topic {
        TOPIC_DOOR => Some(&[DoorTransition]),
        TOPIC_SENSOR => Some(&[SensorChange, DeviceLost]),
        TOPIC_ACCESS => Some(&[AccessGranted]),
        TOPIC_ALARMS => Some(&[Alarm, AlarmUpdate]),
        _ => None,
    }
}

/// One record on a totally ordered topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub topic: String,
    pub offset: u64,
    pub key: String,
    /// Simulation time of the event.
    pub time: f64,
    /// Broker-wide publication sequence number.
    pub seq: u64,
    pub payload: Payload,
}
