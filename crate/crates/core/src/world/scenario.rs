use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AgentClass, SCHEMA_VERSION};
use crate::geometry::Vec3;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("scenario schema version {found} is not supported (expected {expected})")]
    Schema { found: u32, expected: u32 },
    #[error("scenario `{scenario}`: {message}")]
    Invalid { scenario: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: String,
    pub class: AgentClass,
    pub position: Vec3,
    #[serde(default = "default_height")]
    pub height: f64,
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default = "default_speed")]
    pub speed: f64,
    #[serde(default)]
    pub waypoints: Vec<Vec3>,
    #[serde(default)]
    pub credential: Option<String>,
}

pub(crate) fn default_height() -> f64 {
    1.8
}

pub(crate) fn default_width() -> f64 {
    0.5
}

pub(crate) fn default_speed() -> f64 {
    1.5
}

/// A fire actor: the place a fire is spawned when the actor receives `startFire`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FireEmitter {
    pub id: String,
    pub location: Vec3,
    #[serde(default)]
    pub growth_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedAction {
    pub time: f64,
    pub actor: String,
    pub name: String,
    #[serde(default)]
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub duration: f64,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub emitters: Vec<FireEmitter>,
    #[serde(default)]
    pub actions: Vec<TimedAction>,
}

fn default_dt() -> f64 {
    0.1
}

#[derive(Deserialize)]
struct ScenarioFile {
    schema_version: u32,
    #[serde(flatten)]
    script: ScenarioScript,
}

impl ScenarioScript {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(ScenarioError::Schema {
                found: file.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let script = file.script;
        script.check_shape()?;
        Ok(script)
    }

    /// Number of ticks in the run (the last tick's clock reaches `duration`).
    pub fn total_ticks(&self) -> u64 {
        self.tick_at(self.duration)
    }

    /// First tick whose clock is at or after `time`.
    pub fn tick_at(&self, time: f64) -> u64 {
        ((time / self.dt) - 1e-9).ceil().max(0.0) as u64
    }

    fn invalid(&self, message: impl Into<String>) -> ScenarioError {
        ScenarioError::Invalid {
            scenario: self.name.clone(),
            message: message.into(),
        }
    }

    /// Plan-independent invariants. Geometry is checked by [`super::World::new`].
    pub(crate) fn check_shape(&self) -> Result<(), ScenarioError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(self.invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(self.invalid(format!("bad duration {}", self.duration)));
        }
        let mut last = f64::NEG_INFINITY;
        for (i, a) in self.actions.iter().enumerate() {
            if !(0.0..=self.duration).contains(&a.time) {
                return Err(self.invalid(format!(
                    "action #{i} at t={} lies outside [0, {}]",
                    a.time, self.duration
                )));
            }
            if a.time < last {
                return Err(self.invalid(format!("action #{i} at t={} is out of order", a.time)));
            }
            last = a.time;
        }
        for agent in &self.agents {
            let ok = agent.height > 0.0
                && agent.width > 0.0
                && agent.speed >= 0.0
                && agent.position.is_finite()
                && agent.position.z == 0.0;
            if !ok {
                return Err(self.invalid(format!("agent `{}` has invalid dimensions", agent.id)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn actions_must_be_sorted() {
        let text = r#"
schema_version = 1
name = "x"
seed = 1
duration = 10.0
[[actions]]
time = 5.0
actor = "power"
name = "power"
value = "cut"
[[actions]]
time = 2.0
actor = "power"
name = "power"
value = "restore"
"#;
        let err = ScenarioScript::from_toml(text).unwrap_err();
        assert!(err.to_string().contains("out of order"), "{err}");
    }

    #[test]
    fn action_time_must_fit_duration() {
        let text = r#"
schema_version = 1
name = "x"
seed = 1
duration = 10.0
[[actions]]
time = 11.0
actor = "power"
name = "power"
value = "cut"
"#;
        assert!(ScenarioScript::from_toml(text).is_err());
    }

    #[test]
    fn tick_rounding_is_robust_to_decimal_times() {
        let s = ScenarioScript {
            name: "t".into(),
            description: String::new(),
            seed: 0,
            dt: 0.1,
            duration: 100.0,
            agents: vec![],
            emitters: vec![],
            actions: vec![],
        };
        assert_eq!(s.tick_at(3.0), 30);
        assert_eq!(s.tick_at(0.3), 3);
        assert_eq!(s.tick_at(0.7), 7);
        assert_eq!(s.tick_at(0.0), 0);
        assert_eq!(s.total_ticks(), 1000);
    }
}
