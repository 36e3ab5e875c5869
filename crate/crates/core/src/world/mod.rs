//! Deterministic discrete-time simulation of the building.
//!
//! A [`World`] bundles the static [`FloorPlan`] with a [`ScenarioScript`] and
//! advances immutable [`WorldState`] values one tick at a time. Nothing here
//! reads the wall clock or an unseeded RNG, so a given (plan, script) pair
//! always produces the same sequence of states.

mod floorplan;
mod scenario;
mod sim;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use floorplan::{load_floorplan, Door, FloorPlan, PlanError, Room, Zone};
pub use scenario::{AgentSpec, FireEmitter, ScenarioError, ScenarioScript, TimedAction};
pub use sim::{Action, ActionError, World, POWER_ACTOR};

use crate::geometry::Vec3;

/// Current on-disk schema version for floorplan, scenario and config files.
pub const SCHEMA_VERSION: u32 = 1;

/// Room temperature rise per unit of fire intensity, in °C.
pub const FIRE_TEMPERATURE_COEFF: f64 = 40.0;

/// Growth rate used when a fire emitter does not configure one, 1/s.
pub const DEFAULT_FIRE_GROWTH: f64 = 0.05;

/// A location in the building: a room, or outside every room.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Place {
    Room(String),
    Outside,
}

impl Place {
    pub fn room(&self) -> Option<&str> {
        match self {
            Place::Room(id) => Some(id),
            Place::Outside => None,
        }
    }
}

impl From<String> for Place {
    fn from(s: String) -> Self {
        if s == "outside" {
            Place::Outside
        } else {
            Place::Room(s)
        }
    }
}

impl From<Place> for String {
    fn from(p: Place) -> Self {
        match p {
            Place::Room(id) => id,
            Place::Outside => "outside".to_string(),
        }
    }
}

impl fmt::Display for Place {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Place::Room(id) => f.write_str(id),
            Place::Outside => f.write_str("outside"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentClass {
    Person,
    Staff,
    Intruder,
    WeaponRifle,
    WeaponPistol,
    WeaponMachete,
    WeaponAxe,
}

impl AgentClass {
    pub const ALL: [AgentClass; 7] = [
        AgentClass::Person,
        AgentClass::Staff,
        AgentClass::Intruder,
        AgentClass::WeaponRifle,
        AgentClass::WeaponPistol,
        AgentClass::WeaponMachete,
        AgentClass::WeaponAxe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentClass::Person => "person",
            AgentClass::Staff => "staff",
            AgentClass::Intruder => "intruder",
            AgentClass::WeaponRifle => "weapon_rifle",
            AgentClass::WeaponPistol => "weapon_pistol",
            AgentClass::WeaponMachete => "weapon_machete",
            AgentClass::WeaponAxe => "weapon_axe",
        }
    }

    /// Every agent class is a human figure; weapon classes are carriers.
    pub fn is_person(self) -> bool {
        true
    }
}

impl FromStr for AgentClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

impl fmt::Display for AgentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: String,
    pub class: AgentClass,
    pub position: Vec3,
    pub height: f64,
    pub width: f64,
    pub speed: f64,
    pub waypoints: Vec<Vec3>,
    pub credential: Option<String>,
}

impl Agent {
    /// Axis-aligned bounding box corners (width × width × height, standing on the floor).
    pub fn corners(&self) -> [Vec3; 8] {
        box_corners(self.position, self.width / 2.0, self.height)
    }
}

pub fn box_corners(base: Vec3, half_width: f64, height: f64) -> [Vec3; 8] {
    let mut out = [Vec3::default(); 8];
    let mut i = 0;
    for dx in [-half_width, half_width] {
        for dy in [-half_width, half_width] {
            for z in [base.z, base.z + height] {
                out[i] = Vec3::new(base.x + dx, base.y + dy, z);
                i += 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoorMode {
    Locked,
    Closed,
    Open,
}

impl fmt::Display for DoorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DoorMode::Locked => "locked",
            DoorMode::Closed => "closed",
            DoorMode::Open => "open",
        })
    }
}

/// Most recent badge-in at a door. `seq` counts grants building-wide so two
/// consecutive grants with the same badge are still distinguishable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grant {
    pub credential: String,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoorState {
    pub door_id: String,
    pub mode: DoorMode,
    pub opened_at: Option<f64>,
    pub pending_grants: u32,
    pub last_grant: Option<Grant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FireSource {
    pub emitter_id: String,
    pub location: Vec3,
    pub room: String,
    pub intensity: f64,
    pub growth_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub clock: f64,
    pub tick: u64,
    pub agents: Vec<Agent>,
    pub doors: BTreeMap<String, DoorState>,
    pub fires: Vec<FireSource>,
    pub power_on: bool,
    pub room_temperatures: BTreeMap<String, f64>,
    pub flooded_rooms: BTreeSet<String>,
    pub rng_seed: u64,
    pub grants_issued: u64,
}

impl WorldState {
    pub fn agent(&self, id: &str) -> Option<&Agent> {
        self.agents.iter().find(|a| a.id == id)
    }

    pub fn max_fire_intensity(&self, room: &str) -> f64 {
        self.fires
            .iter()
            .filter(|f| f.room == room)
            .map(|f| f.intensity)
            .fold(0.0, f64::max)
    }
}
