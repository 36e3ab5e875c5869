use super::detect::{overlap_ratio, ZeroAreaDoor};
use super::tracker::Tracker;
use crate::geometry::PixelRect;

pub const DEFAULT_DOOR_DELTA: f64 = 0.5;

/// Strictly greater: a ratio equal to `delta` is not at the door.
pub fn is_at_door(ratio: f64, delta: f64) -> bool {
    ratio > delta
}

/// Next at-door state and whether this observation is a falling edge.
pub fn door_edge(was_at_door: bool, ratio: f64, delta: f64) -> (bool, bool) {
    let now = is_at_door(ratio, delta);
    (now, was_at_door && !now)
}

/// Updates `at_door` for the tracks observed this tick and returns the ids
/// that just left the door. Tracks absent from `seen` keep their state;
/// retired tracks are already gone from the tracker and never fire.
pub fn door_transitions(
    tracker: &mut Tracker,
    seen: &[u64],
    door_box: &PixelRect,
    delta: f64,
) -> Result<Vec<u64>, ZeroAreaDoor> {
    let mut fired = Vec::new();
    for &id in seen {
        let Some(track) = tracker.track_mut(id) else {
            continue;
        };
        if !track.class.is_person() {
            continue;
        }
        let ratio = overlap_ratio(door_box, &track.bbox)?;
        let (now, edge) = door_edge(track.at_door, ratio, delta);
        track.at_door = now;
        if edge && !fired.contains(&id) {
            fired.push(id);
        }
    }
    Ok(fired)
}
