use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alarm::AlarmKind;
use crate::vdevices::SensorKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleConfig {
    pub delta: f64,
    pub crowd_limit: u32,
    /// Consecutive over-limit frames before a crowding alarm.
    pub crowd_confirmations: u32,
    pub loiter_seconds: f64,
    pub temp_alarm_c: f64,
    pub fire_visual_threshold: f64,
    /// Consecutive frames at or above the visual threshold.
    pub fire_visual_confirmations: u32,
    pub fire_dedup_seconds: f64,
    pub correlation_window_s: f64,
    pub black_frame_confirmations: u32,
    /// Distinct cameras that must go black before a visual power alarm.
    pub black_frame_cameras: u32,
    pub severities: BTreeMap<AlarmKind, u8>,
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self {
            delta: 0.5,
            crowd_limit: 4,
            crowd_confirmations: 2,
            loiter_seconds: 30.0,
            temp_alarm_c: 45.0,
            fire_visual_threshold: 0.6,
            fire_visual_confirmations: 2,
            fire_dedup_seconds: 60.0,
            correlation_window_s: 20.0,
            black_frame_confirmations: 3,
            black_frame_cameras: 2,
            severities: default_severities(),
        }
    }
}

pub fn default_severities() -> BTreeMap<AlarmKind, u8> {
    BTreeMap::from([
        (AlarmKind::Tailgating, 4),
        (AlarmKind::Crowding, 3),
        (AlarmKind::Loitering, 3),
        (AlarmKind::Fire, 5),
        (AlarmKind::Environmental, 3),
        (AlarmKind::Power, 5),
        (AlarmKind::DeviceLost, 2),
    ])
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuleConfigError {
    #[error("rule setting `{name}` must be positive, got {value}")]
    NotPositive { name: &'static str, value: f64 },
    #[error("rule setting `{name}` must lie in (0, 1], got {value}")]
    NotUnit { name: &'static str, value: f64 },
    #[error("severity for {kind} must be 1-5, got {value}")]
    Severity { kind: AlarmKind, value: u8 },
}

impl RuleConfig {
    pub fn validate(&self) -> Result<(), RuleConfigError> {
        let positive = [
            ("delta", self.delta),
            ("crowd_limit", self.crowd_limit as f64),
            ("crowd_confirmations", self.crowd_confirmations as f64),
            ("loiter_seconds", self.loiter_seconds),
            ("temp_alarm_c", self.temp_alarm_c),
            ("fire_visual_threshold", self.fire_visual_threshold),
            (
                "fire_visual_confirmations",
                self.fire_visual_confirmations as f64,
            ),
            ("fire_dedup_seconds", self.fire_dedup_seconds),
            ("correlation_window_s", self.correlation_window_s),
            (
                "black_frame_confirmations",
                self.black_frame_confirmations as f64,
            ),
            ("black_frame_cameras", self.black_frame_cameras as f64),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(RuleConfigError::NotPositive { name, value });
            }
        }
        for (name, value) in [
            ("delta", self.delta),
            ("fire_visual_threshold", self.fire_visual_threshold),
        ] {
            if value > 1.0 {
                return Err(RuleConfigError::NotUnit { name, value });
            }
        }
        for (&kind, &value) in &self.severities {
            if !(1..=5).contains(&value) {
                return Err(RuleConfigError::Severity { kind, value });
            }
        }
        Ok(())
    }

    /// Configured severity, falling back to the built-in table.
    pub fn severity(&self, kind: AlarmKind) -> u8 {
        self.severities
            .get(&kind)
            .copied()
            .unwrap_or_else(|| default_severities()[&kind])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSite {
    pub kind: SensorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub door: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSite {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub door: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneSite {
    pub room: String,
    pub restricted: bool,
}

/// Static facts about the building that rules join events against.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SiteContext {
    pub sensors: BTreeMap<String, SensorSite>,
    pub cameras: BTreeMap<String, CameraSite>,
    pub zones: BTreeMap<String, ZoneSite>,
}

impl SiteContext {
    pub fn camera_room(&self, camera_id: &str) -> Option<&str> {
        self.cameras.get(camera_id).and_then(|c| c.room.as_deref())
    }

    pub fn sensor_room(&self, sensor_id: &str) -> Option<&str> {
        self.sensors.get(sensor_id).and_then(|s| s.room.as_deref())
    }

    pub fn sensor_door(&self, sensor_id: &str) -> Option<&str> {
        self.sensors.get(sensor_id).and_then(|s| s.door.as_deref())
    }

    pub fn is_restricted(&self, zone_id: &str) -> bool {
        self.zones.get(zone_id).is_some_and(|z| z.restricted)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = RuleConfig::default();
        c.validate().unwrap();
        assert_eq!(c.severity(AlarmKind::Fire), 5);
        assert_eq!(c.severity(AlarmKind::Tailgating), 4);
    }

    #[test]
    fn rejects_non_positive() {
        let c = RuleConfig {
            loiter_seconds: 0.0,
            ..RuleConfig::default()
        };
        assert!(matches!(
            c.validate(),
            Err(RuleConfigError::NotPositive {
                name: "loiter_seconds",
                ..
            })
        ));
        let c = RuleConfig {
            delta: 1.2,
            ..RuleConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn partial_toml_keeps_defaults() {
        let c: RuleConfig = toml::from_str("crowd_limit = 6\n[severities]\nfire = 4\n").unwrap();
        assert_eq!(c.crowd_limit, 6);
        assert_eq!(c.loiter_seconds, 30.0);
        assert_eq!(c.severity(AlarmKind::Fire), 4);
        assert_eq!(c.severity(AlarmKind::Power), 5);
    }
}
