//! Individual rules. Each works on its own slice of engine state and returns
//! an alarm draft; the engine assigns ids and severities.

use serde::{Deserialize, Serialize};

use super::config::RuleConfig;
use crate::alarm::{AlarmKind, EvidenceRef, FireSourceLabel};

/// An alarm before id, severity and state are assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct AlarmDraft {
    pub kind: AlarmKind,
    pub time: f64,
    pub camera_id: Option<String>,
    pub room_id: Option<String>,
    pub door_id: Option<String>,
    pub source: Option<FireSourceLabel>,
    pub confidence: Option<f64>,
    pub evidence: Vec<EvidenceRef>,
    pub detail: String,
}

impl AlarmDraft {
    pub fn new(kind: AlarmKind, time: f64, evidence: Vec<EvidenceRef>) -> Self {
        Self {
            kind,
            time,
            camera_id: None,
            room_id: None,
            door_id: None,
            source: None,
            confidence: None,
            evidence,
            detail: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoorEpisode {
    pub door_id: String,
    pub opened_at: f64,
    #[serde(default)]
    pub closed_at: Option<f64>,
    pub grants: Vec<EvidenceRef>,
    pub transitions: Vec<EvidenceRef>,
    /// Record that opened the episode when it was not a grant.
    #[serde(default)]
    pub opened_by: Option<EvidenceRef>,
}

impl DoorEpisode {
    pub fn open(door_id: &str, opened_at: f64) -> Self {
        Self {
            door_id: door_id.to_string(),
            opened_at,
            closed_at: None,
            grants: Vec::new(),
            transitions: Vec::new(),
            opened_by: None,
        }
    }

    pub fn deadline(&self, cfg: &RuleConfig) -> f64 {
        self.opened_at + cfg.correlation_window_s
    }

    /// Closing time, or the window deadline for an expired episode.
    pub fn end(&self, cfg: &RuleConfig) -> f64 {
        self.closed_at.unwrap_or_else(|| self.deadline(cfg))
    }
}

/// More people through the door than badges presented.
pub fn eval_tailgating(episode: &DoorEpisode, cfg: &RuleConfig) -> Option<AlarmDraft> {
    let (t, g) = (episode.transitions.len(), episode.grants.len());
    if t <= g {
        return None;
    }
    let mut evidence: Vec<EvidenceRef> = episode
        .grants
        .iter()
        .chain(&episode.transitions)
        .cloned()
        .collect();
    evidence.sort_by(|a, b| {
        a.time
            .total_cmp(&b.time)
            .then_with(|| a.topic.cmp(&b.topic))
            .then(a.offset.cmp(&b.offset))
    });
    let mut draft = AlarmDraft::new(AlarmKind::Tailgating, episode.end(cfg), evidence);
    draft.door_id = Some(episode.door_id.clone());
    draft.detail = format!("{t} passages, {g} grants");
    Some(draft)
}

/// Over-limit debounce for one camera's room.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CrowdState {
    pub streak: Vec<EvidenceRef>,
    pub alarmed: bool,
}

pub fn eval_crowding(
    state: &mut CrowdState,
    count: usize,
    frame: EvidenceRef,
    cfg: &RuleConfig,
) -> Option<AlarmDraft> {
    if count <= cfg.crowd_limit as usize {
        state.streak.clear();
        state.alarmed = false;
        return None;
    }
    let time = frame.time;
    state.streak.push(frame);
    let need = cfg.crowd_confirmations as usize;
    if state.streak.len() > need {
        state.streak.remove(0);
    }
    if state.alarmed || state.streak.len() < need {
        return None;
    }
    state.alarmed = true;
    let mut draft = AlarmDraft::new(AlarmKind::Crowding, time, state.streak.clone());
    draft.detail = format!("{count} people, limit {}", cfg.crowd_limit);
    Some(draft)
}

/// Dwell beyond the threshold; the caller remembers which
/// (camera, track, zone) triples already fired.
pub fn eval_loitering(dwell: f64, restricted: bool, cfg: &RuleConfig) -> bool {
    restricted && dwell > cfg.loiter_seconds
}

/// Per-room fire bookkeeping, one dedup clock per detection path.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FireRoomState {
    pub sensor_alarm_at: Option<f64>,
    pub visual_alarm_at: Option<f64>,
    /// Smoke sensors currently reporting fire.
    pub sensors_on: Vec<String>,
    /// Last visual score at or above threshold, with its time.
    pub visual_score: Option<(f64, f64)>,
}

impl FireRoomState {
    fn sensor_active(&self) -> bool {
        !self.sensors_on.is_empty()
    }

    fn visual_active(&self, now: f64, cfg: &RuleConfig) -> Option<f64> {
        self.visual_score
            .filter(|(t, _)| now - t <= cfg.fire_dedup_seconds)
            .map(|(_, s)| s)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VisualFireState {
    pub streak: Vec<EvidenceRef>,
    pub last_score: f64,
}

fn within(last: Option<f64>, now: f64, cfg: &RuleConfig) -> bool {
    last.is_some_and(|t| now - t < cfg.fire_dedup_seconds)
}

/// A smoke/fire sensor reported `on`.
pub fn eval_fire_sensor(
    room: &mut FireRoomState,
    sensor_id: &str,
    on: bool,
    record: EvidenceRef,
    cfg: &RuleConfig,
) -> Option<AlarmDraft> {
    room.sensors_on.retain(|s| s != sensor_id);
    if !on {
        return None;
    }
    room.sensors_on.push(sensor_id.to_string());
    room.sensors_on.sort();
    let now = record.time;
    if within(room.sensor_alarm_at, now, cfg) {
        return None;
    }
    room.sensor_alarm_at = Some(now);
    let mut draft = AlarmDraft::new(AlarmKind::Fire, now, vec![record]);
    let visual = room.visual_active(now, cfg);
    draft.source = Some(if visual.is_some() {
        FireSourceLabel::Both
    } else {
        FireSourceLabel::Sensor
    });
    draft.confidence = Some(1.0f64.max(visual.unwrap_or(0.0)));
    draft.detail = format!("smoke sensor {sensor_id}");
    Some(draft)
}

/// One camera frame's fire score.
pub fn eval_fire_visual(
    cam: &mut VisualFireState,
    room: &mut FireRoomState,
    score: f64,
    record: EvidenceRef,
    cfg: &RuleConfig,
) -> Option<AlarmDraft> {
    cam.last_score = score;
    if score < cfg.fire_visual_threshold {
        cam.streak.clear();
        return None;
    }
    let now = record.time;
    room.visual_score = Some((now, score));
    cam.streak.push(record);
    let need = cfg.fire_visual_confirmations as usize;
    if cam.streak.len() > need {
        cam.streak.remove(0);
    }
    if cam.streak.len() < need || within(room.visual_alarm_at, now, cfg) {
        return None;
    }
    room.visual_alarm_at = Some(now);
    let mut draft = AlarmDraft::new(AlarmKind::Fire, now, cam.streak.clone());
    let sensor = room.sensor_active();
    draft.source = Some(if sensor {
        FireSourceLabel::Both
    } else {
        FireSourceLabel::Visual
    });
    draft.confidence = Some(if sensor { 1.0f64.max(score) } else { score });
    draft.detail = format!("visual fire score {score:.3}");
    Some(draft)
}

/// Temperature or flood condition; alarms once per entry into the condition.
pub fn eval_environment(
    active: &mut bool,
    condition: bool,
    record: EvidenceRef,
    detail: String,
) -> Option<AlarmDraft> {
    let was = std::mem::replace(active, condition);
    if !condition || was {
        return None;
    }
    let mut draft = AlarmDraft::new(AlarmKind::Environmental, record.time, vec![record]);
    draft.detail = detail;
    Some(draft)
}
