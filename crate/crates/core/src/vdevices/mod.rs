//! Virtual devices layered over the simulator: PTZ cameras with a software
//! rasterizer, non-video sensors with change notifications, and the action
//! request handler. Network servers live in the service crate and call into
//! these pure functions.

mod camera;
mod control;
mod render;
mod sensors;

pub use camera::{
    apply_ptz, effective_hfov, ground_truth_visible, CameraPoint, CameraView, ImageRect,
    Projection, PtzCommand, PtzState, VisibleAgent, MAX_ZOOM,
};
pub use control::{
    handle_control_request, ControlAck, ControlBody, ControlError, ControlQuery, ControlQueue,
    ControlResponse, QueuedAction, DEFAULT_CONTROL_PORT,
};
pub use render::{
    class_color, class_of_color, flicker, is_fire_color, render_frame, Frame, GroundTruthBox, Rgb,
    BACKGROUND, BLACK, FIRE_FLICKER_RANGE, FIRE_GREEN_BASE, FIRE_MAX_HEIGHT, FIRE_MAX_WIDTH, FLOOR,
};
pub use sensors::{
    read_sensor, ChangeNotifier, Readings, SensorBank, SensorError, SensorKind, SensorReading,
    SensorSpec, SensorValue, StateChangeNotification, DEFAULT_TEMPERATURE_THRESHOLD,
    SMOKE_THRESHOLD,
};
