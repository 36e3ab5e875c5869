//! Runtime half of vigil: device servers, the gateway that feeds the broker,
//! the rule worker, the alarm store, the operator API and the orchestrator
//! that ties them to the simulated world.

pub mod alarms;
pub mod config;
pub mod console;
pub mod gateway;
pub mod hub;
pub mod imaging;
pub mod persist;
pub mod registry;
pub mod servers;
pub mod system;
pub mod worker;

pub use config::{ConfigError, RunMode, SystemConfig};
pub use persist::RunReport;
pub use system::{Endpoints, RunError, RunOptions, System};
