//! Live device status for the operator API and the console push feed.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;
use vigil_core::alarm::{Alarm, AlarmUpdate};
use vigil_core::vdevices::{SensorKind, SensorValue, StateChangeNotification};

const FEED_BUFFER: usize = 4096;

/// Messages on `WS /api/alarm-stream`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConsoleEvent {
    /// First message on every connection.
    Hello {
        alarms: Vec<Alarm>,
        sensors: Vec<SensorStatus>,
    },
    Alarm {
        alarm: Alarm,
    },
    AlarmUpdate {
        alarm: Alarm,
        update: AlarmUpdate,
    },
    Sensor {
        notification: StateChangeNotification,
    },
    Camera {
        camera: CameraStatus,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraStatus {
    pub camera_id: String,
    pub snapshot_url: String,
    pub stream_url: String,
    pub room: Option<String>,
    pub fps: f64,
    pub last_tick: Option<u64>,
    pub last_frame_time: Option<f64>,
    pub all_black: bool,
    pub lost: bool,
    pub failures: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorStatus {
    pub sensor_id: String,
    pub kind: SensorKind,
    pub room: Option<String>,
    pub door: Option<String>,
    pub value: Option<SensorValue>,
    pub changed_at: Option<f64>,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceList {
    pub cameras: Vec<CameraStatus>,
    pub sensors: Vec<SensorStatus>,
    pub sensor_link_up: bool,
}

#[derive(Debug)]
pub struct Registry {
    cameras: Mutex<BTreeMap<String, CameraStatus>>,
    sensors: Mutex<BTreeMap<String, SensorStatus>>,
    sensor_link_up: Mutex<bool>,
    malformed: AtomicU64,
    seq_gaps: AtomicU64,
    feed: broadcast::Sender<ConsoleEvent>,
}

impl Registry {
    pub fn new(cameras: Vec<CameraStatus>, sensors: Vec<SensorStatus>) -> Self {
        Self {
            cameras: Mutex::new(
                cameras
                    .into_iter()
                    .map(|c| (c.camera_id.clone(), c))
                    .collect(),
            ),
            sensors: Mutex::new(
                sensors
                    .into_iter()
                    .map(|s| (s.sensor_id.clone(), s))
                    .collect(),
            ),
            sensor_link_up: Mutex::new(false),
            malformed: AtomicU64::new(0),
            seq_gaps: AtomicU64::new(0),
            feed: broadcast::channel(FEED_BUFFER).0,
        }
    }

    pub fn feed(&self) -> broadcast::Sender<ConsoleEvent> {
        self.feed.clone()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<ConsoleEvent> {
        self.feed.subscribe()
    }

    pub fn publish(&self, event: ConsoleEvent) {
        let _ = self.feed.send(event);
    }

    pub fn devices(&self) -> DeviceList {
        DeviceList {
            cameras: self
                .cameras
                .lock()
                .expect("registry poisoned")
                .values()
                .cloned()
                .collect(),
            sensors: self.sensors(),
            sensor_link_up: *self.sensor_link_up.lock().expect("registry poisoned"),
        }
    }

    pub fn sensors(&self) -> Vec<SensorStatus> {
        self.sensors
            .lock()
            .expect("registry poisoned")
            .values()
            .cloned()
            .collect()
    }

    pub fn camera(&self, id: &str) -> Option<CameraStatus> {
        self.cameras
            .lock()
            .expect("registry poisoned")
            .get(id)
            .cloned()
    }

    pub fn update_camera(&self, id: &str, f: impl FnOnce(&mut CameraStatus)) {
        let snapshot = {
            let mut cams = self.cameras.lock().expect("registry poisoned");
            let Some(c) = cams.get_mut(id) else { return };
            let before = c.clone();
            f(c);
            // Only state flips are pushed, not every frame.
            (before.lost != c.lost || before.all_black != c.all_black).then(|| c.clone())
        };
        if let Some(camera) = snapshot {
            self.publish(ConsoleEvent::Camera { camera });
        }
    }

    pub fn record_sensor(&self, n: &StateChangeNotification) {
        if let Some(s) = self
            .sensors
            .lock()
            .expect("registry poisoned")
            .get_mut(&n.sensor_id)
        {
            s.value = Some(n.new_value.clone());
            s.seq = n.seq;
            if !n.snapshot || s.changed_at.is_none() {
                s.changed_at = Some(n.time);
            }
        }
        self.publish(ConsoleEvent::Sensor {
            notification: n.clone(),
        });
    }

    pub fn set_sensor_link(&self, up: bool) {
        *self.sensor_link_up.lock().expect("registry poisoned") = up;
    }

    pub fn count_malformed(&self) {
        self.malformed.fetch_add(1, Ordering::Relaxed);
    }

    pub fn malformed(&self) -> u64 {
        self.malformed.load(Ordering::Relaxed)
    }

    pub fn count_seq_gap(&self) {
        self.seq_gaps.fetch_add(1, Ordering::Relaxed);
    }

    pub fn seq_gaps(&self) -> u64 {
        self.seq_gaps.load(Ordering::Relaxed)
    }
}
