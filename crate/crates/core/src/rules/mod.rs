//! Correlates analytics output and sensor changes into typed alarms.

mod config;
mod engine;
mod eval;

pub use config::{
    default_severities, CameraSite, RuleConfig, RuleConfigError, SensorSite, SiteContext, ZoneSite,
};
pub use engine::{EngineState, PowerState, RuleEngine};
pub use eval::{
    eval_crowding, eval_environment, eval_fire_sensor, eval_fire_visual, eval_loitering,
    eval_tailgating, AlarmDraft, CrowdState, DoorEpisode, FireRoomState, VisualFireState,
};
