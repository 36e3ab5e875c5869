mod common;

use std::net::TcpListener as StdListener;
use std::time::Duration;

use common::{config_dir, fast, test_config};
use vigil::config::{ConfigError, SystemConfig};
use vigil::system::{RunError, System};

fn with_cameras(extra: &str) -> String {
    format!(
        r#"
floorplan = "floorplan.toml"
scenarios = "scenarios"
{extra}
"#
    )
}

fn parse(text: &str) -> Result<SystemConfig, ConfigError> {
    let dir = config_dir();
    SystemConfig::from_toml(text, &dir, &dir.join("inline.toml"))
}

#[test]
fn duplicate_ports_name_both_devices() {
    let text = with_cameras(
        r#"
[[cameras]]
id = "cam-a"
port = 21000
position = [5.6, 11.5, 2.8]
yaw_deg = -90.0
visibility = ["ward"]

[[cameras]]
id = "cam-b"
port = 21000
position = [18.0, 11.5, 2.8]
yaw_deg = -90.0
visibility = ["lab"]
"#,
    );
    let err = parse(&text).unwrap_err();
    let msg = err.to_string();
    assert!(
        matches!(err, ConfigError::DuplicatePort { port: 21000, .. }),
        "{msg}"
    );
    assert!(msg.contains("cam-a") && msg.contains("cam-b"), "{msg}");
}

#[test]
fn camera_port_clashing_with_control_is_rejected() {
    let text = with_cameras(
        r#"
[ports]
control = 21001

[[cameras]]
id = "cam-a"
port = 21001
position = [5.6, 11.5, 2.8]
yaw_deg = -90.0
visibility = ["ward"]
"#,
    );
    let msg = parse(&text).unwrap_err().to_string();
    assert!(
        msg.contains("control server") && msg.contains("cam-a"),
        "{msg}"
    );
}

#[test]
fn unknown_keys_and_bad_cameras_are_config_errors() {
    assert!(matches!(
        parse("floorplan = \"floorplan.toml\"\ncolour = 1\n"),
        Err(ConfigError::Parse { .. })
    ));
    let text = with_cameras(
        r#"
[[cameras]]
id = "cam-a"
position = [5.6, 11.5, 2.8]
yaw_deg = -90.0
fps = 0.0
visibility = ["ward"]
"#,
    );
    assert!(matches!(parse(&text), Err(ConfigError::Camera { .. })));
    let text = with_cameras(
        r#"
[[cameras]]
id = "cam-a"
position = [5.6, 11.5, 2.8]
yaw_deg = -90.0
visibility = ["attic"]
"#,
    );
    assert!(parse(&text).is_err());
    assert!(matches!(
        SystemConfig::load(&config_dir().join("missing.toml")),
        Err(ConfigError::Io { .. })
    ));
}

#[test]
fn example_config_is_valid_and_lists_its_scenarios() {
    let cfg = SystemConfig::load(&config_dir().join("system.toml")).unwrap();
    assert_eq!(cfg.cameras.len(), 3);
    let names: Vec<String> = cfg
        .list_scenarios()
        .unwrap()
        .into_iter()
        .map(|(_, s)| s.name)
        .collect();
    for want in [
        "tailgating",
        "authorized",
        "fire",
        "power",
        "crowding",
        "loitering",
        "empty",
    ] {
        assert!(
            names.iter().any(|n| n == want),
            "{want} missing from {names:?}"
        );
    }
    // Lookup by file stem, script name and path all resolve.
    assert_eq!(
        cfg.load_scenario("fire-scripted").unwrap().name,
        "fire-scripted"
    );
    let path = config_dir().join("scenarios/empty.toml");
    assert_eq!(
        cfg.load_scenario(path.to_str().unwrap()).unwrap().name,
        "empty"
    );
    assert!(matches!(
        cfg.load_scenario("nope"),
        Err(ConfigError::UnknownScenario { .. })
    ));
}

#[test]
fn auto_door_boxes_fall_inside_the_image() {
    let cfg = test_config();
    for cam in cfg.cameras.iter().filter(|c| c.door.is_some()) {
        let view = cfg.camera_view(cam);
        let b = view
            .door_box
            .unwrap_or_else(|| panic!("{} has no door box", cam.id));
        assert!(
            !b.is_empty() && b.within(cam.width, cam.height),
            "{}: {b:?}",
            cam.id
        );
    }
    let lab = cfg.analytics_config(cfg.camera("cam-lab").unwrap());
    assert!(lab.zones.iter().any(|z| z.zone_id == "drug-store"));
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_scenario_is_a_config_error_with_exit_code_1() {
    let err = System::start(test_config(), fast("no-such-scenario"))
        .await
        .unwrap_err();
    assert!(matches!(err, RunError::Config(_)), "{err}");
    assert_eq!(err.exit_code(), 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn occupied_port_names_the_module_and_exits_2() {
    let squatter = StdListener::bind("127.0.0.1:0").unwrap();
    let mut cfg = test_config();
    cfg.ports.console = squatter.local_addr().unwrap().port();
    let err = System::start(cfg, fast("empty")).await.unwrap_err();
    match &err {
        RunError::Startup { module, .. } => assert_eq!(module, "console API"),
        other => panic!("unexpected {other}"),
    }
    assert_eq!(err.exit_code(), 2);
}

/// A failure after servers are already running must stop them again.
#[tokio::test(flavor = "multi_thread")]
async fn partial_startup_releases_its_ports() {
    let free = StdListener::bind("127.0.0.1:0").unwrap();
    let port = free.local_addr().unwrap().port();
    drop(free);
    let mut cfg = test_config();
    cfg.ports.control = port;
    cfg.rules.crowd_limit = 0;
    let err = System::start(cfg, fast("empty")).await.unwrap_err();
    assert!(
        matches!(&err, RunError::Startup { module, .. } if module == "rule engine"),
        "{err}"
    );
    let mut rebound = false;
    for _ in 0..50 {
        if StdListener::bind(("127.0.0.1", port)).is_ok() {
            rebound = true;
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    assert!(
        rebound,
        "control port {port} still held after failed startup"
    );
}
