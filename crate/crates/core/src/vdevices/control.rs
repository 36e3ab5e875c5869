//! REST-style action requests (`/action?id=&name=&value=`), validated against
//! the current snapshot and queued for the next tick boundary.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::world::{ActionError, World, WorldState};

pub const DEFAULT_CONTROL_PORT: u16 = 20001;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlQuery {
    pub id: Option<String>,
    pub name: Option<String>,
    pub value: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueuedAction {
    pub actor: String,
    pub name: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlAck {
    pub actor: String,
    pub action: String,
    pub value: String,
    pub scheduled_tick: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlError {
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ControlBody {
    Ack(ControlAck),
    Error(ControlError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlResponse {
    pub status: u16,
    pub body: ControlBody,
}

impl ControlResponse {
    fn error(status: u16, error: impl Into<String>) -> Self {
        Self {
            status,
            body: ControlBody::Error(ControlError {
                error: error.into(),
            }),
        }
    }
}

/// FIFO of accepted actions, drained by the tick loop.
#[derive(Debug, Clone, Default)]
pub struct ControlQueue {
    inner: Arc<Mutex<VecDeque<QueuedAction>>>,
}

impl ControlQueue {
    pub fn push(&self, action: QueuedAction) {
        self.inner
            .lock()
            .expect("control queue poisoned")
            .push_back(action);
    }

    pub fn drain(&self) -> Vec<QueuedAction> {
        self.inner
            .lock()
            .expect("control queue poisoned")
            .drain(..)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("control queue poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Validates a request against `state` and queues it. Unknown actors map to
/// 404, every other failure to 400.
pub fn handle_control_request(
    world: &World,
    state: &WorldState,
    queue: &ControlQueue,
    query: &ControlQuery,
) -> ControlResponse {
    let (Some(actor), Some(name)) = (query.id.as_deref(), query.name.as_deref()) else {
        return ControlResponse::error(400, "missing `id` or `name` parameter");
    };
    let value = query.value.as_deref().unwrap_or_default();
    match world.parse_action(state, actor, name, value) {
        Ok(_) => {
            queue.push(QueuedAction {
                actor: actor.to_string(),
                name: name.to_string(),
                value: value.to_string(),
            });
            ControlResponse {
                status: 200,
                body: ControlBody::Ack(ControlAck {
                    actor: actor.to_string(),
                    action: name.to_string(),
                    value: value.to_string(),
                    scheduled_tick: state.tick + 1,
                }),
            }
        }
        Err(e @ ActionError::UnknownActor(_)) => ControlResponse::error(404, e.to_string()),
        Err(e) => ControlResponse::error(400, e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Footprint, Vec3};
    use crate::world::{FireEmitter, FloorPlan, Room, ScenarioScript};

    fn world() -> World {
        let plan = FloorPlan {
            rooms: vec![Room {
                id: "or".into(),
                footprint: Footprint::new(0.0, 0.0, 10.0, 8.0),
                base_temperature: 21.0,
            }],
            doors: vec![],
            zones: vec![],
        };
        let script = ScenarioScript {
            name: "c".into(),
            description: String::new(),
            seed: 1,
            dt: 0.1,
            duration: 5.0,
            agents: vec![],
            emitters: vec![FireEmitter {
                id: "0".into(),
                location: Vec3::new(5.0, 4.0, 0.0),
                growth_rate: None,
            }],
            actions: vec![],
        };
        World::new(plan, script).unwrap()
    }

    fn q(id: Option<&str>, name: Option<&str>, value: Option<&str>) -> ControlQuery {
        ControlQuery {
            id: id.map(Into::into),
            name: name.map(Into::into),
            value: value.map(Into::into),
        }
    }

    #[test]
    fn start_fire_is_scheduled() {
        let w = world();
        let state = w.initial_state();
        let queue = ControlQueue::default();
        let resp = handle_control_request(
            &w,
            &state,
            &queue,
            &q(Some("0"), Some("fire"), Some("startFire")),
        );
        assert_eq!(resp.status, 200);
        assert_eq!(
            resp.body,
            ControlBody::Ack(ControlAck {
                actor: "0".into(),
                action: "fire".into(),
                value: "startFire".into(),
                scheduled_tick: 1
            })
        );
        assert_eq!(queue.drain().len(), 1);
        assert!(queue.is_empty());
    }

    #[test]
    fn unknown_actor_is_404() {
        let w = world();
        let queue = ControlQueue::default();
        let resp = handle_control_request(
            &w,
            &w.initial_state(),
            &queue,
            &q(Some("banana"), Some("fire"), Some("startFire")),
        );
        assert_eq!(resp.status, 404);
        assert!(queue.is_empty());
    }

    #[test]
    fn missing_name_is_400() {
        let w = world();
        let queue = ControlQueue::default();
        let resp =
            handle_control_request(&w, &w.initial_state(), &queue, &q(Some("0"), None, None));
        assert_eq!(resp.status, 400);
        let resp = handle_control_request(
            &w,
            &w.initial_state(),
            &queue,
            &q(Some("0"), Some("fire"), Some("stopFire")),
        );
        assert_eq!(resp.status, 400);
    }
}
