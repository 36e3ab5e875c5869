use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::Detection;
use crate::geometry::PixelRect;
use crate::world::AgentClass;

pub const IOU_MATCH_THRESHOLD: f64 = 0.3;
/// A track unseen for more than this many ticks is retired.
pub const RETIRE_AFTER_TICKS: u64 = 15;

/// An image region mapped to a floor-plan zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneRegion {
    pub zone_id: String,
    pub region: PixelRect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: u64,
    pub class: AgentClass,
    pub bbox: PixelRect,
    pub first_seen: u64,
    pub last_seen: u64,
    pub at_door: bool,
    /// Seconds accumulated per zone id.
    pub dwell: BTreeMap<String, f64>,
}

impl Track {
    /// First configured zone whose region holds the box's bottom-center.
    pub fn zone<'a>(&self, zones: &'a [ZoneRegion]) -> Option<&'a ZoneRegion> {
        let (x, y) = self.bbox.bottom_center();
        zones.iter().find(|z| z.region.contains_point(x, y))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("detection from camera `{found}` handed to the tracker of `{expected}`")]
pub struct CrossCameraDetection {
    pub expected: String,
    pub found: String,
}

/// Which track each detection landed in, in detection order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackUpdate {
    pub assignments: Vec<u64>,
    pub opened: Vec<u64>,
    pub retired: Vec<u64>,
}

/// Greedy assignment by descending score. Pairs scoring below `threshold`
/// are never matched; ties go to the lower (row, column).
pub fn greedy_match(scores: &[Vec<f64>], threshold: f64) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, usize, usize)> = scores
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, &s)| (s, i, j)))
        .filter(|(s, _, _)| *s >= threshold)
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let rows = scores.len();
    let cols = scores.iter().map(Vec::len).max().unwrap_or(0);
    let (mut row_used, mut col_used) = (vec![false; rows], vec![false; cols]);
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if !row_used[i] && !col_used[j] {
            row_used[i] = true;
            col_used[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// Per-camera IoU tracker. Ids start at 1 and are never reused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracker {
    camera_id: String,
    tracks: BTreeMap<u64, Track>,
    next_id: u64,
}

impl Tracker {
    pub fn new(camera_id: &str) -> Self {
        Self {
            camera_id: camera_id.to_string(),
            tracks: BTreeMap::new(),
            next_id: 1,
        }
    }

    pub fn tracks(&self) -> impl Iterator<Item = &Track> {
        self.tracks.values()
    }

    pub fn track(&self, id: u64) -> Option<&Track> {
        self.tracks.get(&id)
    }

    pub fn track_mut(&mut self, id: u64) -> Option<&mut Track> {
        self.tracks.get_mut(&id)
    }

    /// Retires stale tracks, then matches same-class detections greedily by
    /// IoU. Matched and new tracks in a zone gain `elapsed` seconds of dwell.
    pub fn update(
        &mut self,
        detections: &[Detection],
        tick: u64,
        elapsed: f64,
        zones: &[ZoneRegion],
    ) -> Result<TrackUpdate, CrossCameraDetection> {
        if let Some(d) = detections.iter().find(|d| d.camera_id != self.camera_id) {
            return Err(CrossCameraDetection {
                expected: self.camera_id.clone(),
                found: d.camera_id.clone(),
            });
        }
        let mut update = TrackUpdate::default();
        self.tracks.retain(|&id, t| {
            let keep = tick.saturating_sub(t.last_seen) <= RETIRE_AFTER_TICKS;
            if !keep {
                update.retired.push(id);
            }
            keep
        });

        let ids: Vec<u64> = self.tracks.keys().copied().collect();
        let scores: Vec<Vec<f64>> = ids
            .iter()
            .map(|id| {
                let t = &self.tracks[id];
                detections
                    .iter()
                    .map(|d| {
                        if d.class == t.class {
                            t.bbox.iou(&d.bbox)
                        } else {
                            -1.0
                        }
                    })
                    .collect()
            })
            .collect();
        let mut assigned: Vec<Option<u64>> = vec![None; detections.len()];
        for (i, j) in greedy_match(&scores, IOU_MATCH_THRESHOLD) {
            assigned[j] = Some(ids[i]);
        }

        for (j, d) in detections.iter().enumerate() {
            let id = match assigned[j] {
                Some(id) => {
                    let t = self.tracks.get_mut(&id).expect("matched track exists");
                    t.bbox = d.bbox;
                    t.last_seen = tick;
                    id
                }
                None => {
                    let id = self.next_id;
                    self.next_id += 1;
                    self.tracks.insert(
                        id,
                        Track {
                            track_id: id,
                            class: d.class,
                            bbox: d.bbox,
                            first_seen: tick,
                            last_seen: tick,
                            at_door: false,
                            dwell: BTreeMap::new(),
                        },
                    );
                    update.opened.push(id);
                    id
                }
            };
            let t = self.tracks.get_mut(&id).expect("track exists");
            if let Some(zone) = t.zone(zones).map(|z| z.zone_id.clone()) {
                *t.dwell.entry(zone).or_insert(0.0) += elapsed;
            }
            update.assignments.push(id);
        }
        Ok(update)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(bbox: PixelRect, class: AgentClass) -> Detection {
        Detection {
            bbox,
            class,
            confidence: 1.0,
            camera_id: "cam".into(),
            tick: 0,
        }
    }

    #[test]
    fn identical_detection_keeps_id() {
        let mut t = Tracker::new("cam");
        let d = det(PixelRect::new(10, 10, 40, 90), AgentClass::Person);
        let a = t.update(std::slice::from_ref(&d), 1, 0.1, &[]).unwrap();
        let b = t.update(&[d], 2, 0.1, &[]).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(t.track(a.assignments[0]).unwrap().first_seen, 1);
        assert_eq!(t.track(a.assignments[0]).unwrap().last_seen, 2);
    }

    #[test]
    fn jump_opens_new_track() {
        let mut t = Tracker::new("cam");
        let a = t
            .update(
                &[det(PixelRect::new(0, 0, 20, 60), AgentClass::Person)],
                1,
                0.1,
                &[],
            )
            .unwrap();
        let b = t
            .update(
                &[det(PixelRect::new(200, 0, 220, 60), AgentClass::Person)],
                2,
                0.1,
                &[],
            )
            .unwrap();
        assert_ne!(a.assignments[0], b.assignments[0]);
        assert_eq!(b.opened, b.assignments);
    }

    #[test]
    fn class_mismatch_never_matches() {
        let mut t = Tracker::new("cam");
        let r = PixelRect::new(0, 0, 20, 60);
        let a = t.update(&[det(r, AgentClass::Staff)], 1, 0.1, &[]).unwrap();
        let b = t
            .update(&[det(r, AgentClass::Intruder)], 2, 0.1, &[])
            .unwrap();
        assert_ne!(a.assignments, b.assignments);
    }

    #[test]
    fn greedy_picks_best_first() {
        let m = vec![vec![0.8, 0.4], vec![0.5, 0.7]];
        assert_eq!(greedy_match(&m, 0.3), vec![(0, 0), (1, 1)]);
        let m = vec![vec![0.8, 0.75], vec![0.76, 0.1]];
        assert_eq!(greedy_match(&m, 0.3), vec![(0, 0)]);
    }

    #[test]
    fn retirement_after_fifteen_unseen_ticks() {
        let mut t = Tracker::new("cam");
        let d = det(PixelRect::new(0, 0, 20, 60), AgentClass::Person);
        let a = t.update(std::slice::from_ref(&d), 10, 0.1, &[]).unwrap();
        assert!(t.update(&[], 25, 0.1, &[]).unwrap().retired.is_empty());
        let b = t.update(std::slice::from_ref(&d), 25, 0.1, &[]).unwrap();
        assert_eq!(a.assignments, b.assignments);
        let c = t.update(&[], 41, 0.1, &[]).unwrap();
        assert_eq!(c.retired, a.assignments);
        let d2 = t.update(&[d], 42, 0.1, &[]).unwrap();
        assert!(d2.assignments[0] > a.assignments[0]);
    }

    #[test]
    fn dwell_follows_bottom_center() {
        let zones = vec![ZoneRegion {
            zone_id: "z".into(),
            region: PixelRect::new(0, 50, 100, 100),
        }];
        let mut t = Tracker::new("cam");
        // Bottom-center (10, 59.5) is inside the zone.
        let inside = det(PixelRect::new(0, 0, 20, 60), AgentClass::Person);
        let mut id = 0;
        for tick in 1..=5 {
            id = t
                .update(std::slice::from_ref(&inside), tick, 0.1, &zones)
                .unwrap()
                .assignments[0];
        }
        assert!((t.track(id).unwrap().dwell["z"] - 0.5).abs() < 1e-12);
        // Bottom-center (10, 39.5) is outside.
        let outside = det(PixelRect::new(0, 0, 20, 40), AgentClass::Person);
        t.update(&[outside], 6, 0.1, &zones).unwrap();
        assert!((t.track(id).unwrap().dwell["z"] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn foreign_camera_is_rejected() {
        let mut t = Tracker::new("other");
        let d = det(PixelRect::new(0, 0, 20, 60), AgentClass::Person);
        assert!(t.update(&[d], 1, 0.1, &[]).is_err());
    }
}
