use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::scenario::{default_height, default_speed, default_width};
use super::{
    Agent, AgentClass, DoorMode, DoorState, FireSource, FloorPlan, Grant, Place, ScenarioError,
    ScenarioScript, WorldState, DEFAULT_FIRE_GROWTH, FIRE_TEMPERATURE_COEFF,
};
use crate::geometry::Vec3;

/// Waypoints closer than this are considered reached.
const WAYPOINT_TOLERANCE: f64 = 0.01;
const TIMER_EPS: f64 = 1e-9;

/// Actor id addressed by power actions.
pub const POWER_ACTOR: &str = "power";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("unknown actor `{0}`")]
    UnknownActor(String),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("cannot apply value `{value}`: {reason}")]
    BadValue { value: String, reason: String },
}

fn bad_value(value: &str, reason: impl Into<String>) -> ActionError {
    ActionError::BadValue {
        value: value.to_string(),
        reason: reason.into(),
    }
}

/// A validated action, ready to apply.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    StartFire {
        emitter: String,
    },
    OpenDoor {
        door: String,
    },
    GrantAccess {
        door: String,
        credential: String,
    },
    CloseDoor {
        door: String,
    },
    LockDoor {
        door: String,
    },
    CutPower,
    RestorePower,
    WalkTo {
        agent: String,
        target: Vec3,
    },
    Spawn {
        agent: String,
        class: AgentClass,
        position: Vec3,
    },
    Flood {
        room: String,
        active: bool,
    },
}

/// Static floorplan plus scenario script; steps [`WorldState`] values.
#[derive(Debug, Clone)]
pub struct World {
    plan: FloorPlan,
    script: ScenarioScript,
    action_ticks: Vec<u64>,
}

impl World {
    /// Validates the script against the plan, including a dry run of every
    /// scripted action.
    pub fn new(plan: FloorPlan, script: ScenarioScript) -> Result<Self, ScenarioError> {
        script.check_shape()?;
        let scenario_name = script.name.clone();
        let invalid = |message: String| ScenarioError::Invalid {
            scenario: scenario_name.clone(),
            message,
        };
        for agent in &script.agents {
            if plan.room_of(agent.position) == Place::Outside {
                return Err(invalid(format!(
                    "agent `{}` starts outside the building",
                    agent.id
                )));
            }
            let mut from = agent.position;
            for wp in &agent.waypoints {
                if !plan.leg_inside(from, *wp) {
                    return Err(invalid(format!(
                        "agent `{}` waypoint {wp} leaves the building",
                        agent.id
                    )));
                }
                from = *wp;
            }
        }
        for emitter in &script.emitters {
            if plan.room_of(emitter.location) == Place::Outside {
                return Err(invalid(format!(
                    "emitter `{}` is outside every room",
                    emitter.id
                )));
            }
        }
        let action_ticks = script
            .actions
            .iter()
            .map(|a| script.tick_at(a.time))
            .collect();
        let world = World {
            plan,
            script,
            action_ticks,
        };

        let mut state = world.initial_state();
        for _ in 0..world.script.total_ticks() {
            let (next, errors) = world.step_inner(&state);
            if let Some((i, err)) = errors.into_iter().next() {
                let a = &world.script.actions[i];
                return Err(invalid(format!(
                    "action #{i} ({} {} {}) at t={}: {err}",
                    a.actor, a.name, a.value, a.time
                )));
            }
            state = next;
        }
        Ok(world)
    }

    pub fn plan(&self) -> &FloorPlan {
        &self.plan
    }

    pub fn script(&self) -> &ScenarioScript {
        &self.script
    }

    pub fn dt(&self) -> f64 {
        self.script.dt
    }

    pub fn room_of(&self, p: Vec3) -> Place {
        self.plan.room_of(p)
    }

    pub fn initial_state(&self) -> WorldState {
        let agents = self
            .script
            .agents
            .iter()
            .map(|s| Agent {
                id: s.id.clone(),
                class: s.class,
                position: s.position,
                height: s.height,
                width: s.width,
                speed: s.speed,
                waypoints: s.waypoints.clone(),
                credential: s.credential.clone(),
            })
            .collect();
        let doors = self
            .plan
            .doors
            .iter()
            .map(|d| {
                let state = DoorState {
                    door_id: d.id.clone(),
                    mode: d.initial,
                    opened_at: (d.initial == DoorMode::Open).then_some(0.0),
                    pending_grants: 0,
                    last_grant: None,
                };
                (d.id.clone(), state)
            })
            .collect();
        let mut state = WorldState {
            clock: 0.0,
            tick: 0,
            agents,
            doors,
            fires: Vec::new(),
            power_on: true,
            room_temperatures: BTreeMap::new(),
            flooded_rooms: BTreeSet::new(),
            rng_seed: self.script.seed,
            grants_issued: 0,
        };
        for (i, _) in self.actions_due(0) {
            if let Ok(next) = self.apply_script_action(&state, i) {
                state = next;
            }
        }
        self.update_temperatures(&mut state);
        state
    }

    /// Advances one tick. Never mutates `state`.
    pub fn step(&self, state: &WorldState) -> WorldState {
        let (next, errors) = self.step_inner(state);
        for (i, err) in errors {
            tracing::warn!(action = i, %err, "scripted action skipped");
        }
        next
    }

    pub fn is_finished(&self, state: &WorldState) -> bool {
        state.tick >= self.script.total_ticks()
    }

    fn actions_due(&self, tick: u64) -> impl Iterator<Item = (usize, u64)> + '_ {
        self.action_ticks
            .iter()
            .copied()
            .enumerate()
            .filter(move |&(_, t)| t == tick)
    }

    fn step_inner(&self, state: &WorldState) -> (WorldState, Vec<(usize, ActionError)>) {
        let dt = self.script.dt;
        let mut next = state.clone();
        next.tick += 1;
        next.clock = next.tick as f64 * dt;

        for agent in &mut next.agents {
            advance_agent(agent, dt);
        }
        for fire in &mut next.fires {
            fire.intensity = (fire.intensity + fire.growth_rate * dt).min(1.0);
        }
        for door in next.doors.values_mut() {
            let hold = self
                .plan
                .door(&door.door_id)
                .map_or(0.0, |d| d.hold_open_seconds);
            if let (DoorMode::Open, Some(opened)) = (door.mode, door.opened_at) {
                if next.clock - opened >= hold - TIMER_EPS {
                    close(door, DoorMode::Closed);
                }
            }
        }

        let mut errors = Vec::new();
        let due: Vec<usize> = self.actions_due(next.tick).map(|(i, _)| i).collect();
        for i in due {
            match self.apply_script_action(&next, i) {
                Ok(s) => next = s,
                Err(e) => errors.push((i, e)),
            }
        }
        self.update_temperatures(&mut next);
        (next, errors)
    }

    fn apply_script_action(&self, state: &WorldState, i: usize) -> Result<WorldState, ActionError> {
        let a = &self.script.actions[i];
        self.apply_action(state, &a.actor, &a.name, &a.value)
    }

    fn update_temperatures(&self, state: &mut WorldState) {
        for room in &self.plan.rooms {
            let t =
                room.base_temperature + FIRE_TEMPERATURE_COEFF * state.max_fire_intensity(&room.id);
            state.room_temperatures.insert(room.id.clone(), t);
        }
    }

    /// Parses and applies a named action to an actor.
    pub fn apply_action(
        &self,
        state: &WorldState,
        actor: &str,
        name: &str,
        value: &str,
    ) -> Result<WorldState, ActionError> {
        let action = self.parse_action(state, actor, name, value)?;
        Ok(self.apply(state, &action))
    }

    /// Resolves `(actor, name, value)` against the current state without applying it.
    pub fn parse_action(
        &self,
        state: &WorldState,
        actor: &str,
        name: &str,
        value: &str,
    ) -> Result<Action, ActionError> {
        let unknown_actor = || ActionError::UnknownActor(actor.to_string());
        match name {
            "fire" => {
                if !self.script.emitters.iter().any(|e| e.id == actor) {
                    return Err(unknown_actor());
                }
                match value {
                    "startFire" => Ok(Action::StartFire {
                        emitter: actor.to_string(),
                    }),
                    _ => Err(bad_value(value, "expected startFire")),
                }
            }
            "door" => {
                if self.plan.door(actor).is_none() {
                    return Err(unknown_actor());
                }
                let door = actor.to_string();
                match value {
                    "open" => Ok(Action::OpenDoor { door }),
                    "close" => Ok(Action::CloseDoor { door }),
                    "lock" => Ok(Action::LockDoor { door }),
                    "grant" => Ok(Action::GrantAccess {
                        door,
                        credential: "badge".to_string(),
                    }),
                    v => match v.strip_prefix("grant:") {
                        Some(cred) if !cred.is_empty() => Ok(Action::GrantAccess {
                            door,
                            credential: cred.to_string(),
                        }),
                        _ => Err(bad_value(
                            value,
                            "expected open, close, lock or grant[:badge]",
                        )),
                    },
                }
            }
            "power" => {
                if actor != POWER_ACTOR {
                    return Err(unknown_actor());
                }
                match value {
                    "cut" => Ok(Action::CutPower),
                    "restore" => Ok(Action::RestorePower),
                    _ => Err(bad_value(value, "expected cut or restore")),
                }
            }
            "flood" => {
                if self.plan.room(actor).is_none() {
                    return Err(unknown_actor());
                }
                let active = match value {
                    "start" => true,
                    "stop" => false,
                    _ => return Err(bad_value(value, "expected start or stop")),
                };
                Ok(Action::Flood {
                    room: actor.to_string(),
                    active,
                })
            }
            "agent" => {
                if let Some(arg) = value.strip_prefix("walkTo:") {
                    let agent = state.agent(actor).ok_or_else(unknown_actor)?;
                    let [x, y] = parse_floats::<2>(arg)
                        .ok_or_else(|| bad_value(value, "expected walkTo:<x,y>"))?;
                    let target = Vec3::new(x, y, 0.0);
                    if !self.plan.leg_inside(agent.position, target) {
                        return Err(bad_value(value, "target leaves the building"));
                    }
                    Ok(Action::WalkTo {
                        agent: actor.to_string(),
                        target,
                    })
                } else if let Some(arg) = value.strip_prefix("spawn:") {
                    if state.agent(actor).is_some() {
                        return Err(bad_value(value, format!("agent `{actor}` already exists")));
                    }
                    let mut parts = arg.splitn(2, ',');
                    let class: AgentClass = parts
                        .next()
                        .unwrap_or_default()
                        .trim()
                        .parse()
                        .map_err(|c| bad_value(value, format!("unknown class `{c}`")))?;
                    let [x, y] = parts
                        .next()
                        .and_then(parse_floats::<2>)
                        .ok_or_else(|| bad_value(value, "expected spawn:<class,x,y>"))?;
                    let position = Vec3::new(x, y, 0.0);
                    if self.plan.room_of(position) == Place::Outside {
                        return Err(bad_value(value, "spawn point is outside the building"));
                    }
                    Ok(Action::Spawn {
                        agent: actor.to_string(),
                        class,
                        position,
                    })
                } else {
                    Err(bad_value(
                        value,
                        "expected walkTo:<x,y> or spawn:<class,x,y>",
                    ))
                }
            }
            other => Err(ActionError::UnknownAction(other.to_string())),
        }
    }

    /// Applies a validated action at the state's current clock.
    pub fn apply(&self, state: &WorldState, action: &Action) -> WorldState {
        let mut next = state.clone();
        match action {
            Action::StartFire { emitter } => {
                if let Some(e) = self.script.emitters.iter().find(|e| &e.id == emitter) {
                    let room = self.plan.room_of(e.location).to_string();
                    next.fires.push(FireSource {
                        emitter_id: e.id.clone(),
                        location: e.location,
                        room,
                        intensity: 0.0,
                        growth_rate: e.growth_rate.unwrap_or(DEFAULT_FIRE_GROWTH),
                    });
                }
            }
            Action::OpenDoor { door } => {
                if let Some(d) = next.doors.get_mut(door) {
                    d.mode = DoorMode::Open;
                    d.opened_at = Some(state.clock);
                }
            }
            Action::GrantAccess { door, credential } => {
                next.grants_issued += 1;
                let seq = next.grants_issued;
                if let Some(d) = next.doors.get_mut(door) {
                    d.pending_grants += 1;
                    d.last_grant = Some(Grant {
                        credential: credential.clone(),
                        seq,
                    });
                    d.mode = DoorMode::Open;
                    d.opened_at = Some(state.clock);
                }
            }
            Action::CloseDoor { door } => {
                if let Some(d) = next.doors.get_mut(door) {
                    close(d, DoorMode::Closed);
                }
            }
            Action::LockDoor { door } => {
                if let Some(d) = next.doors.get_mut(door) {
                    close(d, DoorMode::Locked);
                }
            }
            Action::CutPower => next.power_on = false,
            Action::RestorePower => next.power_on = true,
            Action::WalkTo { agent, target } => {
                if let Some(a) = next.agents.iter_mut().find(|a| &a.id == agent) {
                    a.waypoints = vec![*target];
                }
            }
            Action::Spawn {
                agent,
                class,
                position,
            } => next.agents.push(Agent {
                id: agent.clone(),
                class: *class,
                position: *position,
                height: default_height(),
                width: default_width(),
                speed: default_speed(),
                waypoints: Vec::new(),
                credential: None,
            }),
            Action::Flood { room, active } => {
                if *active {
                    next.flooded_rooms.insert(room.clone());
                } else {
                    next.flooded_rooms.remove(room);
                }
            }
        }
        self.update_temperatures(&mut next);
        next
    }
}

fn close(door: &mut DoorState, mode: DoorMode) {
    door.mode = mode;
    door.opened_at = None;
    door.pending_grants = 0;
}

fn advance_agent(agent: &mut Agent, dt: f64) {
    let Some(&target) = agent.waypoints.first() else {
        return;
    };
    let remaining = agent.position.distance_xy(target);
    let step = agent.speed * dt;
    if remaining <= step {
        agent.position = Vec3::new(target.x, target.y, 0.0);
    } else {
        let k = step / remaining;
        agent.position = Vec3::new(
            agent.position.x + (target.x - agent.position.x) * k,
            agent.position.y + (target.y - agent.position.y) * k,
            0.0,
        );
    }
    while let Some(&wp) = agent.waypoints.first() {
        if agent.position.distance_xy(wp) <= WAYPOINT_TOLERANCE {
            agent.waypoints.remove(0);
        } else {
            break;
        }
    }
}

fn parse_floats<const N: usize>(s: &str) -> Option<[f64; N]> {
    let mut out = [0.0; N];
    let mut parts = s.split(',');
    for slot in out.iter_mut() {
        let v: f64 = parts.next()?.trim().parse().ok()?;
        if !v.is_finite() {
            return None;
        }
        *slot = v;
    }
    parts.next().is_none().then_some(out)
}
