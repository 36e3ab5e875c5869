//! Non-video devices: readings derived from world snapshots and the
//! change-only notification stream the alarm manager forwards.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{DoorMode, FloorPlan, Grant, WorldState};

/// Smoke/fire detectors trip at this room fire intensity.
pub const SMOKE_THRESHOLD: f64 = 0.15;

/// Default temperature notification threshold, °C.
pub const DEFAULT_TEMPERATURE_THRESHOLD: f64 = 45.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    SmokeFire,
    Temperature,
    Flood,
    DoorAccess,
    DoorState,
    Power,
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SensorKind::SmokeFire => "smoke_fire",
            SensorKind::Temperature => "temperature",
            SensorKind::Flood => "flood",
            SensorKind::DoorAccess => "door_access",
            SensorKind::DoorState => "door_state",
            SensorKind::Power => "power",
        })
    }
}

/// Kind-specific reading value. `Empty` (JSON `null`) is a door-access
/// sensor that has not seen a badge yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SensorValue {
    Bool(bool),
    Celsius(f64),
    Access(Grant),
    Door(DoorMode),
    Empty,
}

impl SensorValue {
    pub fn as_bool(&self) -> Option<bool> {
        match self {
            SensorValue::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_celsius(&self) -> Option<f64> {
        match self {
            SensorValue::Celsius(c) => Some(*c),
            _ => None,
        }
    }

    pub fn matches_kind(&self, kind: SensorKind) -> bool {
        matches!(
            (kind, self),
            (
                SensorKind::SmokeFire | SensorKind::Flood | SensorKind::Power,
                SensorValue::Bool(_)
            ) | (SensorKind::Temperature, SensorValue::Celsius(_))
                | (
                    SensorKind::DoorAccess,
                    SensorValue::Access(_) | SensorValue::Empty
                )
                | (SensorKind::DoorState, SensorValue::Door(_))
        )
    }
}

impl fmt::Display for SensorValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SensorValue::Bool(b) => write!(f, "{b}"),
            SensorValue::Celsius(c) => write!(f, "{c:.1}°C"),
            SensorValue::Access(g) => write!(f, "{}#{}", g.credential, g.seq),
            SensorValue::Door(m) => write!(f, "{m}"),
            SensorValue::Empty => f.write_str("-"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub id: String,
    pub kind: SensorKind,
    #[serde(default)]
    pub room: Option<String>,
    #[serde(default)]
    pub door: Option<String>,
    /// Temperature notification thresholds, °C.
    #[serde(default)]
    pub thresholds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub sensor_id: String,
    pub kind: SensorKind,
    pub value: SensorValue,
    pub time: f64,
}

pub type Readings = BTreeMap<String, SensorReading>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateChangeNotification {
    pub sensor_id: String,
    pub kind: SensorKind,
    /// `None` in snapshot messages.
    pub old_value: Option<SensorValue>,
    pub new_value: SensorValue,
    pub time: f64,
    pub seq: u64,
    #[serde(default)]
    pub snapshot: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SensorError {
    #[error("unknown sensor `{0}`")]
    UnknownSensor(String),
    #[error("duplicate sensor `{0}`")]
    Duplicate(String),
    #[error("sensor `{sensor}` needs a {what}")]
    Unregistered { sensor: String, what: &'static str },
    #[error("sensor `{sensor}` references unknown {what} `{id}`")]
    UnknownPlace {
        sensor: String,
        what: &'static str,
        id: String,
    },
}

/// Registered sensors of one building.
#[derive(Debug, Clone)]
pub struct SensorBank {
    specs: BTreeMap<String, SensorSpec>,
}

impl SensorBank {
    pub fn new(specs: Vec<SensorSpec>, plan: &FloorPlan) -> Result<Self, SensorError> {
        let mut map = BTreeMap::new();
        for mut spec in specs {
            match spec.kind {
                SensorKind::SmokeFire | SensorKind::Temperature | SensorKind::Flood => {
                    let room = spec.room.as_deref().ok_or(SensorError::Unregistered {
                        sensor: spec.id.clone(),
                        what: "room",
                    })?;
                    if plan.room(room).is_none() {
                        return Err(SensorError::UnknownPlace {
                            sensor: spec.id.clone(),
                            what: "room",
                            id: room.to_string(),
                        });
                    }
                }
                SensorKind::DoorAccess | SensorKind::DoorState => {
                    let door = spec.door.as_deref().ok_or(SensorError::Unregistered {
                        sensor: spec.id.clone(),
                        what: "door",
                    })?;
                    if plan.door(door).is_none() {
                        return Err(SensorError::UnknownPlace {
                            sensor: spec.id.clone(),
                            what: "door",
                            id: door.to_string(),
                        });
                    }
                }
                SensorKind::Power => {}
            }
            if spec.kind == SensorKind::Temperature && spec.thresholds.is_empty() {
                spec.thresholds.push(DEFAULT_TEMPERATURE_THRESHOLD);
            }
            spec.thresholds.sort_by(f64::total_cmp);
            if map.insert(spec.id.clone(), spec.clone()).is_some() {
                return Err(SensorError::Duplicate(spec.id));
            }
        }
        Ok(Self { specs: map })
    }

    pub fn specs(&self) -> impl Iterator<Item = &SensorSpec> {
        self.specs.values()
    }

    pub fn spec(&self, id: &str) -> Option<&SensorSpec> {
        self.specs.get(id)
    }

    pub fn read(
        &self,
        sensor_id: &str,
        snapshot: &WorldState,
    ) -> Result<SensorReading, SensorError> {
        let spec = self
            .specs
            .get(sensor_id)
            .ok_or_else(|| SensorError::UnknownSensor(sensor_id.to_string()))?;
        Ok(read_sensor(spec, snapshot))
    }

    pub fn read_all(&self, snapshot: &WorldState) -> Readings {
        self.specs
            .values()
            .map(|s| (s.id.clone(), read_sensor(s, snapshot)))
            .collect()
    }
}

/// Reads one registered sensor from a snapshot.
pub fn read_sensor(spec: &SensorSpec, snapshot: &WorldState) -> SensorReading {
    let room = spec.room.as_deref().unwrap_or_default();
    let door = spec.door.as_deref().and_then(|d| snapshot.doors.get(d));
    let value = match spec.kind {
        SensorKind::SmokeFire => {
            SensorValue::Bool(snapshot.max_fire_intensity(room) >= SMOKE_THRESHOLD)
        }
        SensorKind::Temperature => SensorValue::Celsius(
            snapshot
                .room_temperatures
                .get(room)
                .copied()
                .unwrap_or(f64::NAN),
        ),
        SensorKind::Flood => SensorValue::Bool(snapshot.flooded_rooms.contains(room)),
        SensorKind::DoorAccess => door
            .and_then(|d| d.last_grant.clone())
            .map_or(SensorValue::Empty, SensorValue::Access),
        SensorKind::DoorState => SensorValue::Door(door.map_or(DoorMode::Locked, |d| d.mode)),
        SensorKind::Power => SensorValue::Bool(snapshot.power_on),
    };
    SensorReading {
        sensor_id: spec.id.clone(),
        kind: spec.kind,
        value,
        time: snapshot.clock,
    }
}

/// Turns successive reading sets into change notifications with gapless
/// per-sensor sequence numbers.
#[derive(Debug, Clone, Default)]
pub struct ChangeNotifier {
    seqs: BTreeMap<String, u64>,
    thresholds: BTreeMap<String, Vec<f64>>,
}

impl ChangeNotifier {
    pub fn new(bank: &SensorBank) -> Self {
        Self {
            seqs: BTreeMap::new(),
            thresholds: bank
                .specs()
                .filter(|s| s.kind == SensorKind::Temperature)
                .map(|s| (s.id.clone(), s.thresholds.clone()))
                .collect(),
        }
    }

    pub fn with_thresholds(thresholds: BTreeMap<String, Vec<f64>>) -> Self {
        Self {
            seqs: BTreeMap::new(),
            thresholds,
        }
    }

    /// Last sequence number issued for a sensor (0 before any change).
    pub fn seq(&self, sensor_id: &str) -> u64 {
        self.seqs.get(sensor_id).copied().unwrap_or(0)
    }

    pub fn notify_changes(
        &mut self,
        prev: &Readings,
        next: &Readings,
    ) -> Vec<StateChangeNotification> {
        let mut out = Vec::new();
        for (id, new) in next {
            let Some(old) = prev.get(id) else { continue };
            let changed = match (&old.value, &new.value) {
                (SensorValue::Celsius(a), SensorValue::Celsius(b)) => {
                    let ts = self
                        .thresholds
                        .get(id)
                        .map(Vec::as_slice)
                        .unwrap_or(&[DEFAULT_TEMPERATURE_THRESHOLD]);
                    ts.iter().any(|t| (a < t) != (b < t))
                }
                (a, b) => a != b,
            };
            if changed {
                let seq = self.seqs.entry(id.clone()).or_insert(0);
                *seq += 1;
                out.push(StateChangeNotification {
                    sensor_id: id.clone(),
                    kind: new.kind,
                    old_value: Some(old.value.clone()),
                    new_value: new.value.clone(),
                    time: new.time,
                    seq: *seq,
                    snapshot: false,
                });
            }
        }
        out
    }

    /// One snapshot message per sensor carrying its current value.
    pub fn snapshot(&self, current: &Readings) -> Vec<StateChangeNotification> {
        current
            .values()
            .map(|r| StateChangeNotification {
                sensor_id: r.sensor_id.clone(),
                kind: r.kind,
                old_value: None,
                new_value: r.value.clone(),
                time: r.time,
                seq: self.seq(&r.sensor_id),
                snapshot: true,
            })
            .collect()
    }
}
