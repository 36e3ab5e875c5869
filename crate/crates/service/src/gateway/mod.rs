//! Device drivers on the monitoring side: camera frame ingest, sensor
//! notification ingest and PTZ forwarding.

mod backoff;
mod camera;
mod multipart;
mod ptz;
mod sensors;

pub use backoff::{
    backoff_delay, Backoff, Clock, FakeClock, Sleep, TokioClock, BACKOFF_BASE, BACKOFF_CAP,
    BACKOFF_FACTOR, LOST_AFTER_FAILURES,
};
pub use camera::{CameraIngest, FetchError, FetchOutcome, IngestError};
pub use multipart::{MultipartError, MultipartParser, StreamPart};
pub use ptz::{PtzError, PtzForwarder};
pub use sensors::{LinkError, SensorIngest, SENSOR_MANAGER_ID};
