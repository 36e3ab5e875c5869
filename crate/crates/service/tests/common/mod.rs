//! Shared fixtures: the example hospital config with every port ephemeral.
#![allow(dead_code)]

use std::path::PathBuf;

use vigil::config::{RunMode, SystemConfig};
use vigil::system::{RunOptions, System};

pub fn config_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../config")
}

/// Example config, all ports 0, ground truth enabled.
pub fn test_config() -> SystemConfig {
    let mut cfg =
        SystemConfig::load(&config_dir().join("system.toml")).expect("example config loads");
    cfg.ports.control = 0;
    cfg.ports.console = 0;
    cfg.ports.alarm_manager = 0;
    for c in &mut cfg.cameras {
        c.port = 0;
    }
    cfg.test_mode = true;
    cfg
}

pub fn fast(scenario: &str) -> RunOptions {
    RunOptions {
        scenario: Some(scenario.to_string()),
        mode: Some(RunMode::Fast),
        no_persist: true,
        ..Default::default()
    }
}

pub fn fast_into(scenario: &str, dir: PathBuf) -> RunOptions {
    RunOptions {
        run_dir: Some(dir),
        no_persist: false,
        ..fast(scenario)
    }
}

pub async fn start(scenario: &str) -> System {
    System::start(test_config(), fast(scenario))
        .await
        .expect("system starts")
}
