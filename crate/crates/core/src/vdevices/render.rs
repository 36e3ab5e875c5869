//! Flat-shaded software rasterizer for virtual cameras.

use serde::{Deserialize, Serialize};

use super::camera::{fire_corners, CameraView};
use crate::geometry::{PixelRect, Vec3};
use crate::world::{AgentClass, FloorPlan, WorldState};

pub type Rgb = [u8; 3];

pub const BACKGROUND: Rgb = [128, 128, 128];
pub const FLOOR: Rgb = [90, 90, 90];
pub const BLACK: Rgb = [0, 0, 0];

/// Fire pixels are `(255, FIRE_GREEN_BASE + k, 0)` with `k < FIRE_FLICKER_RANGE`.
pub const FIRE_GREEN_BASE: u8 = 96;
pub const FIRE_FLICKER_RANGE: u8 = 64;

/// Extent of a fully developed fire, in meters.
pub const FIRE_MAX_WIDTH: f64 = 1.2;
pub const FIRE_MAX_HEIGHT: f64 = 2.0;

/// Reserved class colors. None of them appears in the background, the floor
/// or the fire band, which makes color segmentation an exact detector.
pub fn class_color(class: AgentClass) -> Rgb {
    match class {
        AgentClass::Person => [0, 0, 255],
        AgentClass::Staff => [0, 128, 255],
        AgentClass::Intruder => [255, 0, 255],
        AgentClass::WeaponRifle => [0, 200, 0],
        AgentClass::WeaponPistol => [0, 200, 200],
        AgentClass::WeaponMachete => [200, 200, 0],
        AgentClass::WeaponAxe => [128, 0, 128],
    }
}

pub fn class_of_color(rgb: Rgb) -> Option<AgentClass> {
    AgentClass::ALL.into_iter().find(|c| class_color(*c) == rgb)
}

pub fn is_fire_color(rgb: Rgb) -> bool {
    rgb[0] == 255
        && rgb[2] == 0
        && (FIRE_GREEN_BASE..FIRE_GREEN_BASE + FIRE_FLICKER_RANGE).contains(&rgb[1])
}

/// Deterministic per-pixel flicker offset in `[0, 64)`.
pub fn flicker(seed: u64, tick: u64, x: u32, y: u32) -> u8 {
    let mut z = seed
        ^ tick.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ ((x as u64) << 32 | y as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z % FIRE_FLICKER_RANGE as u64) as u8
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub agent_id: String,
    pub class: AgentClass,
    pub rect: PixelRect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub camera_id: String,
    pub tick: u64,
    pub time: f64,
    pub width: u32,
    pub height: u32,
    /// Row-major RGB8.
    pub pixels: Vec<u8>,
    /// Oracle data, never handed to analytics in production.
    pub ground_truth: Vec<GroundTruthBox>,
}

impl Frame {
    pub fn filled(
        camera_id: &str,
        tick: u64,
        time: f64,
        width: u32,
        height: u32,
        rgb: Rgb,
    ) -> Self {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self {
            camera_id: camera_id.to_string(),
            tick,
            time,
            width,
            height,
            pixels,
            ground_truth: Vec::new(),
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> Rgb {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: Rgb) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn fill_rect(&mut self, rect: PixelRect, rgb: Rgb) {
        let r = rect.intersect(&PixelRect::new(0, 0, self.width as i64, self.height as i64));
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                self.set_pixel(x as u32, y as u32, rgb);
            }
        }
    }

    pub fn is_all_black(&self) -> bool {
        self.pixels.iter().all(|&b| b == 0)
    }

    pub fn is_valid(&self) -> bool {
        self.pixels.len() == self.width as usize * self.height as usize * 3
            && self
                .ground_truth
                .iter()
                .all(|g| g.rect.within(self.width, self.height))
    }
}

enum Paint {
    Agent(GroundTruthBox),
    Fire(PixelRect),
}

/// Renders the camera's view of a world snapshot.
pub fn render_frame(cam: &CameraView, snapshot: &WorldState, plan: &FloorPlan) -> Frame {
    let (w, h) = (cam.image_width, cam.image_height);
    if !snapshot.power_on {
        return Frame::filled(&cam.camera_id, snapshot.tick, snapshot.clock, w, h, BLACK);
    }

    let mut frame = Frame::filled(
        &cam.camera_id,
        snapshot.tick,
        snapshot.clock,
        w,
        h,
        BACKGROUND,
    );
    let horizon = cam.horizon_row();
    let first_floor_row = ((horizon - 0.5).ceil().clamp(0.0, h as f64)) as i64;
    frame.fill_rect(
        PixelRect::new(0, first_floor_row, w as i64, h as i64),
        FLOOR,
    );

    // (depth, tie-break key, paint)
    let mut items: Vec<(f64, String, Paint)> = Vec::new();
    for agent in &snapshot.agents {
        let in_view = plan
            .room_of(agent.position)
            .room()
            .is_some_and(|r| cam.sees_room(r));
        if !in_view || !cam.box_in_frustum(&agent.corners()) {
            continue;
        }
        if let Some(rect) = cam.project_agent(agent) {
            let center = agent.position + Vec3::new(0.0, 0.0, agent.height / 2.0);
            items.push((
                cam.depth_of(center),
                format!("a:{}", agent.id),
                Paint::Agent(GroundTruthBox {
                    agent_id: agent.id.clone(),
                    class: agent.class,
                    rect,
                }),
            ));
        }
    }
    for (i, fire) in snapshot.fires.iter().enumerate() {
        if fire.intensity <= 0.0 || !cam.sees_room(&fire.room) {
            continue;
        }
        let fw = FIRE_MAX_WIDTH * fire.intensity;
        let fh = FIRE_MAX_HEIGHT * fire.intensity;
        let corners = fire_corners(fire.location, fw, fh);
        if !cam.box_in_frustum(&corners) {
            continue;
        }
        if let Some(rect) = cam
            .project_corners(&corners)
            .and_then(|r| r.rasterize(w, h))
        {
            let center = fire.location + Vec3::new(0.0, 0.0, fh / 2.0);
            items.push((cam.depth_of(center), format!("f:{i:08}"), Paint::Fire(rect)));
        }
    }
    // Painter's algorithm: farthest first.
    items.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));

    for (_, _, paint) in items {
        match paint {
            Paint::Agent(gt) => {
                frame.fill_rect(gt.rect, class_color(gt.class));
                frame.ground_truth.push(gt);
            }
            Paint::Fire(rect) => {
                for y in rect.y0..rect.y1 {
                    for x in rect.x0..rect.x1 {
                        let k = flicker(snapshot.rng_seed, snapshot.tick, x as u32, y as u32);
                        frame.set_pixel(x as u32, y as u32, [255, FIRE_GREEN_BASE + k, 0]);
                    }
                }
            }
        }
    }
    frame
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Footprint;
    use crate::vdevices::camera::PtzState;
    use crate::world::{Agent, FireSource, Room};
    use std::collections::{BTreeMap, BTreeSet};

    fn plan() -> FloorPlan {
        FloorPlan {
            rooms: vec![Room {
                id: "r".into(),
                footprint: Footprint::new(0.0, -10.0, 20.0, 10.0),
                base_temperature: 21.0,
            }],
            doors: vec![],
            zones: vec![],
        }
    }

    fn cam() -> CameraView {
        CameraView {
            camera_id: "c".into(),
            position: Vec3::new(0.5, 0.0, 2.5),
            base_yaw: 0.0,
            base_pitch: -0.2,
            base_hfov: 1.4,
            image_width: 160,
            image_height: 120,
            ptz: PtzState::default(),
            visibility: vec!["r".into()],
            door_box: None,
            listen_port: 0,
        }
    }

    fn state(agents: Vec<Agent>) -> WorldState {
        WorldState {
            clock: 0.0,
            tick: 0,
            agents,
            doors: BTreeMap::new(),
            fires: vec![],
            power_on: true,
            room_temperatures: BTreeMap::new(),
            flooded_rooms: BTreeSet::new(),
            rng_seed: 42,
            grants_issued: 0,
        }
    }

    fn agent(id: &str, class: AgentClass, x: f64, y: f64) -> Agent {
        Agent {
            id: id.into(),
            class,
            position: Vec3::new(x, y, 0.0),
            height: 1.8,
            width: 0.5,
            speed: 0.0,
            waypoints: vec![],
            credential: None,
        }
    }

    #[test]
    fn reserved_colors_are_distinct() {
        let mut all: Vec<Rgb> = AgentClass::ALL.iter().map(|c| class_color(*c)).collect();
        all.extend([BACKGROUND, FLOOR, BLACK]);
        let n = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), n);
        for c in AgentClass::ALL {
            assert!(!is_fire_color(class_color(c)));
        }
    }

    #[test]
    fn power_cut_is_black() {
        let mut s = state(vec![agent("a", AgentClass::Person, 6.0, 0.0)]);
        s.power_on = false;
        let f = render_frame(&cam(), &s, &plan());
        assert!(f.is_all_black());
        assert!(f.ground_truth.is_empty());
        assert!(f.is_valid());
    }

    #[test]
    fn empty_room_has_no_class_pixels() {
        let f = render_frame(&cam(), &state(vec![]), &plan());
        assert!(f.ground_truth.is_empty());
        for y in 0..f.height {
            for x in 0..f.width {
                let p = f.pixel(x, y);
                assert!(class_of_color(p).is_none());
                assert!(p == BACKGROUND || p == FLOOR);
            }
        }
        assert_eq!(f.pixel(0, 0), BACKGROUND);
        assert_eq!(f.pixel(0, f.height - 1), FLOOR);
    }

    #[test]
    fn nearer_agent_painted_on_top() {
        let s = state(vec![
            agent("near", AgentClass::Staff, 5.0, 0.0),
            agent("far", AgentClass::Intruder, 9.0, 0.0),
        ]);
        let f = render_frame(&cam(), &s, &plan());
        let near = f
            .ground_truth
            .iter()
            .find(|g| g.agent_id == "near")
            .unwrap();
        let (cx, cy) = (
            ((near.rect.x0 + near.rect.x1) / 2) as u32,
            ((near.rect.y0 + near.rect.y1) / 2) as u32,
        );
        assert_eq!(f.pixel(cx, cy), class_color(AgentClass::Staff));
        assert_eq!(f.ground_truth.len(), 2);
    }

    #[test]
    fn fire_pixels_in_band() {
        let mut s = state(vec![]);
        s.fires.push(FireSource {
            emitter_id: "0".into(),
            location: Vec3::new(6.0, 0.0, 0.0),
            room: "r".into(),
            intensity: 0.8,
            growth_rate: 0.05,
        });
        let f = render_frame(&cam(), &s, &plan());
        let fire_px = (0..f.height)
            .flat_map(|y| (0..f.width).map(move |x| (x, y)))
            .filter(|&(x, y)| is_fire_color(f.pixel(x, y)))
            .count();
        assert!(fire_px > 100, "{fire_px}");
        let again = render_frame(&cam(), &s, &plan());
        assert_eq!(f, again);
    }

    #[test]
    fn flicker_range() {
        for t in 0..50 {
            for x in 0..30 {
                assert!(flicker(9, t, x, x * 3) < 64);
            }
        }
    }
}
