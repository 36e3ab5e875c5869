//! Alarm records raised by the rule engine and updated by operators.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmKind {
    Tailgating,
    Crowding,
    Loitering,
    Fire,
    Environmental,
    Power,
    DeviceLost,
}

impl AlarmKind {
    pub const ALL: [AlarmKind; 7] = [
        AlarmKind::Tailgating,
        AlarmKind::Crowding,
        AlarmKind::Loitering,
        AlarmKind::Fire,
        AlarmKind::Environmental,
        AlarmKind::Power,
        AlarmKind::DeviceLost,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AlarmKind::Tailgating => "tailgating",
            AlarmKind::Crowding => "crowding",
            AlarmKind::Loitering => "loitering",
            AlarmKind::Fire => "fire",
            AlarmKind::Environmental => "environmental",
            AlarmKind::Power => "power",
            AlarmKind::DeviceLost => "device_lost",
        }
    }
}

impl fmt::Display for AlarmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlarmKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AlarmKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown alarm type `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmState {
    Open,
    Acknowledged,
    Rejected,
}

impl AlarmState {
    pub fn as_str(self) -> &'static str {
        match self {
            AlarmState::Open => "open",
            AlarmState::Acknowledged => "acknowledged",
            AlarmState::Rejected => "rejected",
        }
    }
}

impl fmt::Display for AlarmState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlarmState {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "open" => Ok(AlarmState::Open),
            "acknowledged" => Ok(AlarmState::Acknowledged),
            "rejected" => Ok(AlarmState::Rejected),
            _ => Err(format!("unknown alarm state `{s}`")),
        }
    }
}

/// Which detection path confirmed a fire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FireSourceLabel {
    Sensor,
    Visual,
    Both,
}

/// A `(topic, offset)` reference into the broker, with the record's sim time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub topic: String,
    pub offset: u64,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alarm {
    pub alarm_id: String,
    #[serde(rename = "type")]
    pub kind: AlarmKind,
    pub severity: u8,
    pub time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub door_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<FireSourceLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    pub evidence: Vec<EvidenceRef>,
    pub state: AlarmState,
    #[serde(default)]
    pub detail: String,
}

impl Alarm {
    /// Sim seconds from the earliest evidence record to the alarm.
    pub fn latency(&self) -> f64 {
        let earliest = self
            .evidence
            .iter()
            .map(|e| e.time)
            .fold(f64::INFINITY, f64::min);
        if earliest.is_finite() {
            self.time - earliest
        } else {
            0.0
        }
    }

    pub fn transition(&self, to: AlarmState) -> Result<Alarm, IllegalTransition> {
        if self.state != AlarmState::Open || to == AlarmState::Open {
            return Err(IllegalTransition {
                alarm_id: self.alarm_id.clone(),
                from: self.state,
                to,
            });
        }
        Ok(Alarm {
            state: to,
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("alarm {alarm_id} cannot move from {from} to {to}")]
pub struct IllegalTransition {
    pub alarm_id: String,
    pub from: AlarmState,
    pub to: AlarmState,
}

/// Operator decision on an alarm, published to the alarms topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmUpdate {
    pub alarm_id: String,
    pub from: AlarmState,
    pub to: AlarmState,
    pub operator: String,
    /// Unix milliseconds.
    pub wall_time_ms: u64,
}
