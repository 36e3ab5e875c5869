use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DoorMode, Place, SCHEMA_VERSION};
use crate::geometry::{Footprint, Vec3};

const EDGE_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("cannot read floorplan {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed floorplan: {0}")]
    Parse(String),
    #[error("floorplan schema version {found} is not supported (expected {expected})")]
    Schema { found: u32, expected: u32 },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("{element}: footprint is empty or not finite")]
    InvalidFootprint { element: String },
    #[error("rooms `{a}` and `{b}` overlap")]
    OverlappingRooms { a: String, b: String },
    #[error("door `{door}` does not lie on the boundary of room `{room}`")]
    DetachedDoor { door: String, room: String },
    #[error("{element} references unknown room `{room}`")]
    UnknownRoom { element: String, room: String },
    #[error("zone `{zone}` extends outside room `{room}`")]
    ZoneOutsideRoom { zone: String, room: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub id: String,
    pub footprint: Footprint,
    pub base_temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Door {
    pub id: String,
    /// Wall segment endpoints `[[x, y], [x, y]]`.
    pub segment: [[f64; 2]; 2],
    /// Connected places; inferred from geometry when left empty.
    #[serde(default)]
    pub connects: Vec<Place>,
    pub hold_open_seconds: f64,
    #[serde(default = "default_door_mode")]
    pub initial: DoorMode,
}

fn default_door_mode() -> DoorMode {
    DoorMode::Locked
}

impl Door {
    pub fn midpoint(&self) -> Vec3 {
        let [a, b] = self.segment;
        Vec3::new((a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0, 0.0)
    }

    /// Closed distance test against the door segment.
    pub fn touches(&self, x: f64, y: f64, tol: f64) -> bool {
        let [a, b] = self.segment;
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((x - a[0]) * dx + (y - a[1]) * dy) / len2).clamp(0.0, 1.0)
        };
        let (px, py) = (a[0] + t * dx, a[1] + t * dy);
        (x - px).hypot(y - py) <= tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub id: String,
    pub room: String,
    pub footprint: Footprint,
    pub purpose: String,
}

impl Zone {
    pub fn is_restricted(&self) -> bool {
        self.purpose == "restricted"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorPlan {
    #[serde(default)]
    pub rooms: Vec<Room>,
    #[serde(default)]
    pub doors: Vec<Door>,
    #[serde(default)]
    pub zones: Vec<Zone>,
}

#[derive(Deserialize)]
struct PlanFile {
    schema_version: u32,
    #[serde(flatten)]
    plan: FloorPlan,
}

/// Reads and validates a floorplan file.
pub fn load_floorplan(path: &Path) -> Result<FloorPlan, PlanError> {
    let text = std::fs::read_to_string(path).map_err(|source| PlanError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    FloorPlan::from_toml(&text)
}

impl FloorPlan {
    pub fn load(path: &Path) -> Result<Self, PlanError> {
        load_floorplan(path)
    }

    pub fn from_toml(text: &str) -> Result<Self, PlanError> {
        let file: PlanFile = toml::from_str(text).map_err(|e| PlanError::Parse(e.to_string()))?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(PlanError::Schema {
                found: file.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let mut plan = file.plan;
        plan.validate()?;
        Ok(plan)
    }

    /// Checks every invariant and fills in inferred door connections.
    pub fn validate(&mut self) -> Result<(), PlanError> {
        let mut ids = BTreeSet::new();
        let all_ids = self
            .rooms
            .iter()
            .map(|r| &r.id)
            .chain(self.doors.iter().map(|d| &d.id))
            .chain(self.zones.iter().map(|z| &z.id));
        for id in all_ids {
            if id == "outside" || !ids.insert(id.clone()) {
                return Err(PlanError::DuplicateId(id.clone()));
            }
        }

        for room in &self.rooms {
            if !room.footprint.is_valid() || !room.base_temperature.is_finite() {
                return Err(PlanError::InvalidFootprint {
                    element: format!("room `{}`", room.id),
                });
            }
        }
        for (i, a) in self.rooms.iter().enumerate() {
            for b in &self.rooms[i + 1..] {
                if a.footprint.overlaps(&b.footprint) {
                    return Err(PlanError::OverlappingRooms {
                        a: a.id.clone(),
                        b: b.id.clone(),
                    });
                }
            }
        }

        for i in 0..self.doors.len() {
            let door = &self.doors[i];
            if door.connects.is_empty() {
                let mut connects: Vec<Place> = self
                    .rooms
                    .iter()
                    .filter(|r| segment_on_boundary(&r.footprint, door.segment))
                    .map(|r| Place::Room(r.id.clone()))
                    .collect();
                match connects.len() {
                    0 => {
                        return Err(PlanError::DetachedDoor {
                            door: door.id.clone(),
                            room: "any".into(),
                        })
                    }
                    1 => connects.push(Place::Outside),
                    _ => {}
                }
                self.doors[i].connects = connects;
            } else {
                for place in &door.connects {
                    let Place::Room(room_id) = place else {
                        continue;
                    };
                    let room = self.room(room_id).ok_or_else(|| PlanError::UnknownRoom {
                        element: format!("door `{}`", door.id),
                        room: room_id.clone(),
                    })?;
                    if !segment_on_boundary(&room.footprint, door.segment) {
                        return Err(PlanError::DetachedDoor {
                            door: door.id.clone(),
                            room: room_id.clone(),
                        });
                    }
                }
            }
        }

        for zone in &self.zones {
            if !zone.footprint.is_valid() {
                return Err(PlanError::InvalidFootprint {
                    element: format!("zone `{}`", zone.id),
                });
            }
            let room = self
                .room(&zone.room)
                .ok_or_else(|| PlanError::UnknownRoom {
                    element: format!("zone `{}`", zone.id),
                    room: zone.room.clone(),
                })?;
            if !room.footprint.contains_rect(&zone.footprint) {
                return Err(PlanError::ZoneOutsideRoom {
                    zone: zone.id.clone(),
                    room: zone.room.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn room(&self, id: &str) -> Option<&Room> {
        self.rooms.iter().find(|r| r.id == id)
    }

    pub fn door(&self, id: &str) -> Option<&Door> {
        self.doors.iter().find(|d| d.id == id)
    }

    pub fn zone(&self, id: &str) -> Option<&Zone> {
        self.zones.iter().find(|z| z.id == id)
    }

    /// The unique room whose half-open footprint contains `(p.x, p.y)`.
    pub fn room_of(&self, p: Vec3) -> Place {
        self.rooms
            .iter()
            .find(|r| r.footprint.contains(p.x, p.y))
            .map(|r| Place::Room(r.id.clone()))
            .unwrap_or(Place::Outside)
    }

    /// Union of closed room footprints and door segments.
    pub fn inside_building(&self, x: f64, y: f64) -> bool {
        self.rooms.iter().any(|r| r.footprint.contains_closed(x, y))
            || self.doors.iter().any(|d| d.touches(x, y, 1e-6))
    }

    /// True when the straight leg from `a` to `b` stays inside the building,
    /// sampled every 5 cm.
    pub fn leg_inside(&self, a: Vec3, b: Vec3) -> bool {
        let len = a.distance_xy(b);
        let n = ((len / 0.05).ceil() as usize).max(1);
        (0..=n).all(|i| {
            let t = i as f64 / n as f64;
            self.inside_building(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t)
        })
    }
}

fn segment_on_boundary(r: &Footprint, seg: [[f64; 2]; 2]) -> bool {
    let [a, b] = seg;
    let on_vertical = |x: f64| {
        (a[0] - x).abs() <= EDGE_EPS
            && (b[0] - x).abs() <= EDGE_EPS
            && [a[1], b[1]]
                .iter()
                .all(|&y| y >= r.y0 - EDGE_EPS && y <= r.y1 + EDGE_EPS)
    };
    let on_horizontal = |y: f64| {
        (a[1] - y).abs() <= EDGE_EPS
            && (b[1] - y).abs() <= EDGE_EPS
            && [a[0], b[0]]
                .iter()
                .all(|&x| x >= r.x0 - EDGE_EPS && x <= r.x1 + EDGE_EPS)
    };
    on_vertical(r.x0) || on_vertical(r.x1) || on_horizontal(r.y0) || on_horizontal(r.y1)
}
