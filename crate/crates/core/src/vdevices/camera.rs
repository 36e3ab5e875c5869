//! Pinhole camera model with pan/tilt/zoom.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::geometry::{PixelRect, Vec3};
use crate::world::{box_corners, Agent, AgentClass, FloorPlan, WorldState};

pub const MAX_ZOOM: f64 = 32.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PtzState {
    pub pan: f64,
    pub tilt: f64,
    pub zoom: f64,
}

impl Default for PtzState {
    fn default() -> Self {
        Self {
            pan: 0.0,
            tilt: 0.0,
            zoom: 1.0,
        }
    }
}

/// Relative pan/tilt, absolute zoom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PtzCommand {
    pub pan_delta: f64,
    pub tilt_delta: f64,
    pub zoom: f64,
}

pub fn apply_ptz(ptz: PtzState, cmd: PtzCommand) -> PtzState {
    PtzState {
        pan: (ptz.pan + cmd.pan_delta).clamp(-PI, PI),
        tilt: (ptz.tilt + cmd.tilt_delta).clamp(-FRAC_PI_2, FRAC_PI_2),
        zoom: cmd.zoom.clamp(1.0, MAX_ZOOM),
    }
}

/// Horizontal field of view after optical zoom.
pub fn effective_hfov(base_hfov: f64, zoom: f64) -> f64 {
    2.0 * ((base_hfov / 2.0).tan() / zoom).atan()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub camera_id: String,
    pub position: Vec3,
    pub base_yaw: f64,
    pub base_pitch: f64,
    pub base_hfov: f64,
    pub image_width: u32,
    pub image_height: u32,
    #[serde(default)]
    pub ptz: PtzState,
    pub visibility: Vec<String>,
    #[serde(default)]
    pub door_box: Option<PixelRect>,
    #[serde(default)]
    pub listen_port: u16,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Point { u: f64, v: f64 },
    BehindCamera,
}

/// A point expressed in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPoint {
    pub lateral: f64,
    pub vertical: f64,
    pub depth: f64,
}

/// Float image rectangle `[u0, u1] × [v0, v1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageRect {
    pub u0: f64,
    pub v0: f64,
    pub u1: f64,
    pub v1: f64,
}

impl ImageRect {
    /// Pixels whose centers fall inside the rectangle, clipped to the image.
    pub fn rasterize(&self, width: u32, height: u32) -> Option<PixelRect> {
        let px = |v: f64, max: u32| ((v - 0.5).ceil().clamp(0.0, max as f64)) as i64;
        let r = PixelRect::new(
            px(self.u0, width),
            px(self.v0, height),
            px(self.u1, width),
            px(self.v1, height),
        );
        (!r.is_empty()).then_some(r)
    }
}

impl CameraView {
    pub fn is_valid(&self) -> bool {
        self.base_hfov > 0.0
            && self.base_hfov < PI
            && self.image_width >= 16
            && self.image_height >= 16
            && self.position.is_finite()
            && self
                .door_box
                .is_none_or(|b| !b.is_empty() && b.within(self.image_width, self.image_height))
    }

    pub fn yaw(&self) -> f64 {
        self.base_yaw + self.ptz.pan
    }

    pub fn pitch(&self) -> f64 {
        self.base_pitch + self.ptz.tilt
    }

    pub fn hfov(&self) -> f64 {
        effective_hfov(self.base_hfov, self.ptz.zoom)
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        (self.image_width as f64 / 2.0) / (self.hfov() / 2.0).tan()
    }

    /// Forward, right and up unit vectors.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let (sy, cy) = self.yaw().sin_cos();
        let (sp, cp) = self.pitch().sin_cos();
        let forward = Vec3::new(cp * cy, cp * sy, sp);
        let right = Vec3::new(sy, -cy, 0.0);
        let up = Vec3::new(-sp * cy, -sp * sy, cp);
        (forward, right, up)
    }

    pub fn to_camera(&self, p: Vec3) -> CameraPoint {
        let (forward, right, up) = self.basis();
        let q = p - self.position;
        CameraPoint {
            lateral: q.dot(right),
            vertical: q.dot(up),
            depth: q.dot(forward),
        }
    }

    pub fn project_point(&self, p: Vec3) -> Projection {
        let c = self.to_camera(p);
        if c.depth <= 0.0 {
            return Projection::BehindCamera;
        }
        let f = self.focal();
        Projection::Point {
            u: self.image_width as f64 / 2.0 + f * (c.lateral / c.depth),
            v: self.image_height as f64 / 2.0 - f * (c.vertical / c.depth),
        }
    }

    /// Image row of the floor horizon (may lie outside the image).
    pub fn horizon_row(&self) -> f64 {
        self.image_height as f64 / 2.0 + self.focal() * self.pitch().tan()
    }

    /// Bounds of the in-front corners, or `None` when every corner is behind.
    pub fn project_corners(&self, corners: &[Vec3]) -> Option<ImageRect> {
        let mut rect: Option<ImageRect> = None;
        for c in corners {
            if let Projection::Point { u, v } = self.project_point(*c) {
                rect = Some(match rect {
                    None => ImageRect {
                        u0: u,
                        v0: v,
                        u1: u,
                        v1: v,
                    },
                    Some(r) => ImageRect {
                        u0: r.u0.min(u),
                        v0: r.v0.min(v),
                        u1: r.u1.max(u),
                        v1: r.v1.max(v),
                    },
                });
            }
        }
        rect
    }

    /// Projected pixel rectangle of an agent's bounding box, clipped to the image.
    pub fn project_agent(&self, agent: &Agent) -> Option<PixelRect> {
        self.project_corners(&agent.corners())?
            .rasterize(self.image_width, self.image_height)
    }

    /// Conservative frustum test: false only when all corners lie outside
    /// one of the frustum planes.
    pub fn box_in_frustum(&self, corners: &[Vec3]) -> bool {
        let tx = (self.hfov() / 2.0).tan();
        let ty = tx * self.image_height as f64 / self.image_width as f64;
        let pts: Vec<CameraPoint> = corners.iter().map(|c| self.to_camera(*c)).collect();
        let planes: [&dyn Fn(&CameraPoint) -> bool; 5] = [
            &|p| p.depth > 0.0,
            &|p| p.lateral <= p.depth * tx,
            &|p| -p.lateral <= p.depth * tx,
            &|p| p.vertical <= p.depth * ty,
            &|p| -p.vertical <= p.depth * ty,
        ];
        planes.iter().all(|inside| pts.iter().any(inside))
    }

    pub fn sees_room(&self, room: &str) -> bool {
        self.visibility.iter().any(|r| r == room)
    }

    /// Camera-frame depth of a world point (for painter ordering).
    pub fn depth_of(&self, p: Vec3) -> f64 {
        self.to_camera(p).depth
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibleAgent {
    pub agent_id: String,
    pub class: AgentClass,
    pub min: Vec3,
    pub max: Vec3,
}

/// Agents whose box intersects the frustum and whose room is on the camera's
/// visibility list. Walls are modeled by the list, not by ray casting.
pub fn ground_truth_visible(
    plan: &FloorPlan,
    state: &WorldState,
    camera: &CameraView,
) -> Vec<VisibleAgent> {
    state
        .agents
        .iter()
        .filter(|a| {
            plan.room_of(a.position)
                .room()
                .is_some_and(|r| camera.sees_room(r))
        })
        .filter(|a| camera.box_in_frustum(&a.corners()))
        .map(|a| {
            let h = a.width / 2.0;
            VisibleAgent {
                agent_id: a.id.clone(),
                class: a.class,
                min: Vec3::new(a.position.x - h, a.position.y - h, 0.0),
                max: Vec3::new(a.position.x + h, a.position.y + h, a.height),
            }
        })
        .collect()
}

pub(crate) fn fire_corners(location: Vec3, width: f64, height: f64) -> [Vec3; 8] {
    box_corners(location, width / 2.0, height)
}
