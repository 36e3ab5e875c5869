//! `system.toml`: devices, ports, rule parameters and scenario location.

use std::collections::BTreeMap;
use std::net::{IpAddr, Ipv4Addr};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use vigil_core::analytics::{CameraAnalyticsConfig, ZoneRegion};
use vigil_core::geometry::{PixelRect, Vec3};
use vigil_core::rules::{
    CameraSite, RuleConfig, RuleConfigError, SensorSite, SiteContext, ZoneSite,
};
use vigil_core::vdevices::{
    CameraView, PtzState, SensorBank, SensorError, SensorKind, SensorSpec, DEFAULT_CONTROL_PORT,
};
use vigil_core::world::{FloorPlan, PlanError, ScenarioError, ScenarioScript};

/// Door region used when a camera config gives a door but no box: the central
/// slice of the opening a walking person fills.
const AUTO_DOOR_HALF_WIDTH: f64 = 0.3;
const AUTO_DOOR_BOTTOM: f64 = 0.1;
const AUTO_DOOR_TOP: f64 = 1.6;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sensors(#[from] SensorError),
    #[error(transparent)]
    Rules(#[from] RuleConfigError),
    #[error("port {port} is used by both {first} and {second}")]
    DuplicatePort {
        port: u16,
        first: String,
        second: String,
    },
    #[error("duplicate camera id `{0}`")]
    DuplicateCamera(String),
    #[error("camera `{camera}`: {message}")]
    Camera { camera: String, message: String },
    #[error("scenario `{name}` not found in {dir}")]
    UnknownScenario { name: String, dir: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Ticks paced to the wall clock; device workers run freely.
    #[default]
    Realtime,
    /// Lockstep: every device exchange for a tick completes before the next.
    Fast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestMode {
    #[default]
    Snapshot,
    Stream,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PortConfig {
    pub control: u16,
    pub console: u16,
    pub alarm_manager: u16,
}

impl Default for PortConfig {
    fn default() -> Self {
        Self {
            control: DEFAULT_CONTROL_PORT,
            console: 8080,
            alarm_manager: 20002,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneView {
    pub zone: String,
    /// `[x0, y0, x1, y1]`, half-open pixels.
    pub region: [i64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub id: String,
    #[serde(default)]
    pub port: u16,
    pub position: [f64; 3],
    pub yaw_deg: f64,
    #[serde(default)]
    pub pitch_deg: f64,
    #[serde(default = "default_hfov")]
    pub hfov_deg: f64,
    #[serde(default = "default_width")]
    pub width: u32,
    #[serde(default = "default_height")]
    pub height: u32,
    #[serde(default = "default_fps")]
    pub fps: f64,
    pub visibility: Vec<String>,
    /// Room attached to tracks; defaults to the only visible room.
    #[serde(default)]
    pub room: Option<String>,
    #[serde(default)]
    pub door: Option<String>,
    /// Pixel door box; projected from the door geometry when omitted.
    #[serde(default)]
    pub door_box: Option<[i64; 4]>,
    /// Door overlap threshold; defaults to the rule config's `delta`.
    #[serde(default)]
    pub delta: Option<f64>,
    /// Zone regions; projected from floorplan zone footprints when omitted.
    #[serde(default)]
    pub zones: Option<Vec<ZoneView>>,
    #[serde(default)]
    pub ptz: PtzState,
    /// Whether the gateway pulls frames from this camera.
    #[serde(default = "default_true")]
    pub ingest: bool,
}

fn default_hfov() -> f64 {
    90.0
}

fn default_width() -> u32 {
    640
}

fn default_height() -> u32 {
    480
}

fn default_fps() -> f64 {
    10.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    floorplan: PathBuf,
    #[serde(default = "default_scenario_dir")]
    scenarios: PathBuf,
    #[serde(default)]
    scenario: Option<String>,
    #[serde(default = "default_log_dir")]
    log_dir: PathBuf,
    #[serde(default)]
    mode: RunMode,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default = "default_host")]
    host: IpAddr,
    #[serde(default)]
    test_mode: bool,
    #[serde(default)]
    ingest: IngestMode,
    #[serde(default)]
    ports: PortConfig,
    #[serde(default)]
    cameras: Vec<CameraConfig>,
    #[serde(default)]
    sensors: Vec<SensorSpec>,
    #[serde(default)]
    rules: RuleConfig,
}

fn default_scenario_dir() -> PathBuf {
    PathBuf::from("scenarios")
}

fn default_log_dir() -> PathBuf {
    PathBuf::from("logs")
}

fn default_host() -> IpAddr {
    IpAddr::V4(Ipv4Addr::LOCALHOST)
}

/// A validated configuration with paths resolved against the config file.
#[derive(Debug, Clone)]
pub struct SystemConfig {
    pub floorplan_path: PathBuf,
    pub plan: FloorPlan,
    pub scenario_dir: PathBuf,
    /// Default scenario name or path.
    pub scenario: Option<String>,
    pub log_dir: PathBuf,
    pub mode: RunMode,
    pub seed: Option<u64>,
    pub host: IpAddr,
    /// Enables `/ground_truth` on cameras.
    pub test_mode: bool,
    pub ingest: IngestMode,
    pub ports: PortConfig,
    pub cameras: Vec<CameraConfig>,
    pub sensors: Vec<SensorSpec>,
    pub rules: RuleConfig,
}

impl SystemConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base, path)
    }

    /// Parses config text; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path, origin: &Path) -> Result<Self, ConfigError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        let floorplan_path = base.join(&file.floorplan);
        let plan = FloorPlan::load(&floorplan_path)?;
        let cfg = Self {
            floorplan_path,
            plan,
            scenario_dir: base.join(&file.scenarios),
            scenario: file.scenario,
            log_dir: base.join(&file.log_dir),
            mode: file.mode,
            seed: file.seed,
            host: file.host,
            test_mode: file.test_mode,
            ingest: file.ingest,
            ports: file.ports,
            cameras: file.cameras,
            sensors: file.sensors,
            rules: file.rules,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.rules.validate()?;
        self.check_ports()?;
        self.sensor_bank()?;
        let mut ids = std::collections::BTreeSet::new();
        for cam in &self.cameras {
            if !ids.insert(cam.id.as_str()) {
                return Err(ConfigError::DuplicateCamera(cam.id.clone()));
            }
            let bad = |message: String| ConfigError::Camera {
                camera: cam.id.clone(),
                message,
            };
            if !(cam.fps > 0.0 && cam.fps <= 60.0) {
                return Err(bad(format!("fps {} is outside (0, 60]", cam.fps)));
            }
            for room in &cam.visibility {
                if self.plan.room(room).is_none() {
                    return Err(bad(format!("unknown room `{room}` in visibility")));
                }
            }
            if let Some(door) = &cam.door {
                if self.plan.door(door).is_none() {
                    return Err(bad(format!("unknown door `{door}`")));
                }
            }
            if let Some(room) = &cam.room {
                if self.plan.room(room).is_none() {
                    return Err(bad(format!("unknown room `{room}`")));
                }
            }
            if let Some(zones) = &cam.zones {
                for z in zones {
                    if self.plan.zone(&z.zone).is_none() {
                        return Err(bad(format!("unknown zone `{}`", z.zone)));
                    }
                }
            }
            let view = self.camera_view(cam);
            if !view.is_valid() {
                return Err(bad("invalid geometry, image size or door box".into()));
            }
            if cam.door.is_some() && view.door_box.is_none() {
                return Err(bad("door is not visible, set `door_box` explicitly".into()));
            }
            vigil_core::analytics::CameraAnalytics::new(self.analytics_config(cam))
                .map_err(|e| bad(e.to_string()))?;
        }
        Ok(())
    }

    /// Non-zero ports must be distinct; 0 asks the OS for a free port.
    fn check_ports(&self) -> Result<(), ConfigError> {
        let mut used: BTreeMap<u16, String> = BTreeMap::new();
        let mut claim = |port: u16, owner: String| -> Result<(), ConfigError> {
            if port == 0 {
                return Ok(());
            }
            if let Some(first) = used.get(&port) {
                return Err(ConfigError::DuplicatePort {
                    port,
                    first: first.clone(),
                    second: owner,
                });
            }
            used.insert(port, owner);
            Ok(())
        };
        claim(self.ports.control, "control server".into())?;
        claim(self.ports.console, "console API".into())?;
        claim(self.ports.alarm_manager, "alarm manager".into())?;
        for cam in &self.cameras {
            claim(cam.port, format!("camera `{}`", cam.id))?;
        }
        Ok(())
    }

    /// Sensor registry; temperature sensors also notify at the rule threshold.
    pub fn sensor_bank(&self) -> Result<SensorBank, ConfigError> {
        let specs = self
            .sensors
            .iter()
            .cloned()
            .map(|mut s| {
                if s.kind == SensorKind::Temperature
                    && !s.thresholds.contains(&self.rules.temp_alarm_c)
                {
                    s.thresholds.push(self.rules.temp_alarm_c);
                }
                s
            })
            .collect();
        Ok(SensorBank::new(specs, &self.plan)?)
    }

    pub fn camera(&self, id: &str) -> Option<&CameraConfig> {
        self.cameras.iter().find(|c| c.id == id)
    }

    fn camera_room(&self, cam: &CameraConfig) -> Option<String> {
        cam.room
            .clone()
            .or_else(|| match cam.visibility.as_slice() {
                [only] => Some(only.clone()),
                _ => None,
            })
    }

    pub fn camera_view(&self, cam: &CameraConfig) -> CameraView {
        let [x, y, z] = cam.position;
        let mut view = CameraView {
            camera_id: cam.id.clone(),
            position: Vec3::new(x, y, z),
            base_yaw: cam.yaw_deg.to_radians(),
            base_pitch: cam.pitch_deg.to_radians(),
            base_hfov: cam.hfov_deg.to_radians(),
            image_width: cam.width,
            image_height: cam.height,
            ptz: PtzState::default(),
            visibility: cam.visibility.clone(),
            door_box: None,
            listen_port: cam.port,
        };
        view.door_box = match (cam.door_box, &cam.door) {
            (Some([x0, y0, x1, y1]), _) => Some(PixelRect::new(x0, y0, x1, y1)),
            (None, Some(door)) => self.project_door(&view, door),
            (None, None) => None,
        };
        view.ptz = cam.ptz;
        view
    }

    fn project_door(&self, view: &CameraView, door_id: &str) -> Option<PixelRect> {
        let door = self.plan.door(door_id)?;
        let [a, b] = door.segment;
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len = dx.hypot(dy);
        if len == 0.0 {
            return None;
        }
        let half = AUTO_DOOR_HALF_WIDTH.min(len / 2.0);
        let c = door.midpoint();
        let (ux, uy) = (dx / len * half, dy / len * half);
        let corners: Vec<Vec3> = [AUTO_DOOR_BOTTOM, AUTO_DOOR_TOP]
            .into_iter()
            .flat_map(|z| {
                [
                    Vec3::new(c.x - ux, c.y - uy, z),
                    Vec3::new(c.x + ux, c.y + uy, z),
                ]
            })
            .collect();
        view.project_corners(&corners)?
            .rasterize(view.image_width, view.image_height)
    }

    fn zone_regions(&self, cam: &CameraConfig, view: &CameraView) -> Vec<ZoneRegion> {
        if let Some(zones) = &cam.zones {
            return zones
                .iter()
                .map(|z| {
                    let [x0, y0, x1, y1] = z.region;
                    ZoneRegion {
                        zone_id: z.zone.clone(),
                        region: PixelRect::new(x0, y0, x1, y1),
                    }
                })
                .collect();
        }
        self.plan
            .zones
            .iter()
            .filter(|z| view.sees_room(&z.room))
            .filter_map(|z| {
                let f = z.footprint;
                let corners = [
                    Vec3::new(f.x0, f.y0, 0.0),
                    Vec3::new(f.x1, f.y0, 0.0),
                    Vec3::new(f.x0, f.y1, 0.0),
                    Vec3::new(f.x1, f.y1, 0.0),
                ];
                let region = view
                    .project_corners(&corners)?
                    .rasterize(view.image_width, view.image_height)?;
                Some(ZoneRegion {
                    zone_id: z.id.clone(),
                    region,
                })
            })
            .collect()
    }

    pub fn analytics_config(&self, cam: &CameraConfig) -> CameraAnalyticsConfig {
        let view = self.camera_view(cam);
        let mut a = CameraAnalyticsConfig::new(&cam.id);
        a.room = self.camera_room(cam);
        a.door_id = cam.door.clone();
        a.door_box = view.door_box;
        a.delta = cam.delta.unwrap_or(self.rules.delta);
        a.zones = self.zone_regions(cam, &view);
        a
    }

    /// Static site knowledge handed to the rule engine.
    pub fn site_context(&self) -> SiteContext {
        SiteContext {
            sensors: self
                .sensors
                .iter()
                .map(|s| {
                    (
                        s.id.clone(),
                        SensorSite {
                            kind: s.kind,
                            room: s.room.clone(),
                            door: s.door.clone(),
                        },
                    )
                })
                .collect(),
            cameras: self
                .cameras
                .iter()
                .map(|c| {
                    (
                        c.id.clone(),
                        CameraSite {
                            room: self.camera_room(c),
                            door: c.door.clone(),
                        },
                    )
                })
                .collect(),
            zones: self
                .plan
                .zones
                .iter()
                .map(|z| {
                    (
                        z.id.clone(),
                        ZoneSite {
                            room: z.room.clone(),
                            restricted: z.is_restricted(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Resolves a scenario given as a path, a file stem in the scenario
    /// directory, or a script `name`.
    pub fn load_scenario(&self, name_or_path: &str) -> Result<ScenarioScript, ConfigError> {
        let direct = Path::new(name_or_path);
        if direct.extension().is_some_and(|e| e == "toml") && direct.is_file() {
            return Ok(ScenarioScript::load(direct)?);
        }
        let by_stem = self.scenario_dir.join(format!("{name_or_path}.toml"));
        if by_stem.is_file() {
            return Ok(ScenarioScript::load(&by_stem)?);
        }
        for (_, script) in self.list_scenarios()? {
            if script.name == name_or_path {
                return Ok(script);
            }
        }
        Err(ConfigError::UnknownScenario {
            name: name_or_path.to_string(),
            dir: self.scenario_dir.clone(),
        })
    }

    /// Every parseable scenario file in the scenario directory, by file name.
    pub fn list_scenarios(&self) -> Result<Vec<(PathBuf, ScenarioScript)>, ConfigError> {
        let entries = std::fs::read_dir(&self.scenario_dir).map_err(|source| ConfigError::Io {
            path: self.scenario_dir.clone(),
            source,
        })?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "toml"))
            .collect();
        paths.sort();
        paths
            .into_iter()
            .map(|p| {
                ScenarioScript::load(&p)
                    .map(|s| (p, s))
                    .map_err(ConfigError::from)
            })
            .collect()
    }
}
