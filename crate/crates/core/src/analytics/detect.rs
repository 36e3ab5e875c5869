use thiserror::Error;

use crate::events::Detection;
use crate::geometry::PixelRect;
use crate::vdevices::{class_of_color, is_fire_color, Frame};
use crate::world::AgentClass;

pub const MIN_AREA: i64 = 64;

/// Fire-pixel fraction at which the visual score saturates.
pub const FIRE_SATURATION_FRACTION: f64 = 0.05;

/// Pixel area of a figure at typical viewing distance; detections at least
/// this large get confidence 1. Every class renders as a human-sized box.
pub fn expected_area(_class: AgentClass) -> f64 {
    2400.0
}

/// Color segmentation: every 4-connected run of a reserved class color with
/// at least `min_area` pixels becomes one detection.
pub fn detect(frame: &Frame, min_area: i64) -> Vec<Detection> {
    let (w, h) = (frame.width as usize, frame.height as usize);
    let mut seen = vec![false; w * h];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    for start in 0..w * h {
        if seen[start] {
            continue;
        }
        let rgb = pixel(frame, start);
        let Some(class) = class_of_color(rgb) else {
            continue;
        };
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut area = 0i64;
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            area += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
            let mut visit = |j: usize| {
                if !seen[j] && pixel(frame, j) == rgb {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if area >= min_area {
            out.push(Detection {
                bbox: PixelRect::new(x0 as i64, y0 as i64, x1 as i64, y1 as i64),
                class,
                confidence: (area as f64 / expected_area(class)).min(1.0),
                camera_id: frame.camera_id.clone(),
                tick: frame.tick,
            });
        }
    }
    out.sort_by_key(|d| (d.bbox.y0, d.bbox.x0, d.bbox.y1, d.bbox.x1, d.class));
    out
}

fn pixel(frame: &Frame, i: usize) -> [u8; 3] {
    let p = &frame.pixels[i * 3..i * 3 + 3];
    [p[0], p[1], p[2]]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("door box {0} has zero area")]
pub struct ZeroAreaDoor(pub PixelRect);

/// `|door ∩ person| / |door|` on half-open pixel rectangles.
pub fn overlap_ratio(door: &PixelRect, person: &PixelRect) -> Result<f64, ZeroAreaDoor> {
    if door.area() <= 0 {
        return Err(ZeroAreaDoor(*door));
    }
    Ok(door.intersect(person).area() as f64 / door.area() as f64)
}

/// `min(1, f / 0.05)` where `f` is the fraction of fire-band pixels.
pub fn fire_score(frame: &Frame) -> f64 {
    let total = frame.width as usize * frame.height as usize;
    if total == 0 {
        return 0.0;
    }
    let fire = frame
        .pixels
        .chunks_exact(3)
        .filter(|p| is_fire_color([p[0], p[1], p[2]]))
        .count();
    (fire as f64 / total as f64 / FIRE_SATURATION_FRACTION).min(1.0)
}
