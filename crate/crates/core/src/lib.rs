//! Core of the vigil physical-threat monitoring stack.
//!
//! Everything in this crate is deterministic and free of I/O beyond reading
//! configuration files: the building simulator, virtual device models, the
//! in-process event broker, per-camera analytics and the rule engine.

pub mod alarm;
pub mod analytics;
pub mod bus;
pub mod events;
pub mod geometry;
pub mod rules;
pub mod vdevices;
pub mod world;
