use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::config::{RuleConfig, RuleConfigError, SiteContext};
use super::eval::{
    eval_crowding, eval_environment, eval_fire_sensor, eval_fire_visual, eval_loitering,
    eval_tailgating, AlarmDraft, CrowdState, DoorEpisode, FireRoomState, VisualFireState,
};
use crate::alarm::{Alarm, AlarmKind, AlarmState, EvidenceRef};
use crate::events::{
    AccessGranted, DetectionSet, DeviceLost, DoorTransitionEvent, EventRecord, FrameMeta, Payload,
};
use crate::vdevices::{SensorKind, SensorValue, StateChangeNotification};
use crate::world::DoorMode;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerState {
    pub outage: bool,
    /// Consecutive all-black frames per camera, capped at the confirmation count.
    pub black_streaks: BTreeMap<String, Vec<EvidenceRef>>,
}

/// Everything the engine remembers between records. Serializable so a
/// consumer can checkpoint it alongside its committed offsets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    /// Next unprocessed offset per topic.
    pub next_offsets: BTreeMap<String, u64>,
    pub alarms_raised: u64,
    pub open_episodes: BTreeMap<String, DoorEpisode>,
    pub closed_episodes: u64,
    pub crowd: BTreeMap<String, CrowdState>,
    /// `camera/track/zone` keys that already raised a loitering alarm.
    pub loitered: BTreeSet<String>,
    pub fire_rooms: BTreeMap<String, FireRoomState>,
    pub fire_cameras: BTreeMap<String, VisualFireState>,
    /// Sensors currently in an environmental alarm condition.
    pub environment_active: BTreeSet<String>,
    pub sensor_values: BTreeMap<String, SensorValue>,
    pub sensor_seqs: BTreeMap<String, u64>,
    pub grant_seqs: BTreeMap<String, u64>,
    pub power: PowerState,
    pub lost_devices: BTreeSet<String>,
    pub skipped: u64,
}

#[derive(Debug, Clone)]
pub struct RuleEngine {
    cfg: RuleConfig,
    site: SiteContext,
    state: EngineState,
}

impl RuleEngine {
    pub fn new(cfg: RuleConfig, site: SiteContext) -> Result<Self, RuleConfigError> {
        Self::restore(cfg, site, EngineState::default())
    }

    pub fn restore(
        cfg: RuleConfig,
        site: SiteContext,
        state: EngineState,
    ) -> Result<Self, RuleConfigError> {
        cfg.validate()?;
        Ok(Self { cfg, site, state })
    }

    pub fn config(&self) -> &RuleConfig {
        &self.cfg
    }

    pub fn site(&self) -> &SiteContext {
        &self.site
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    /// Whether `record` was already applied.
    pub fn has_seen(&self, record: &EventRecord) -> bool {
        self.state
            .next_offsets
            .get(&record.topic)
            .is_some_and(|&next| record.offset < next)
    }

    /// Applies one record. Records already applied are ignored, which makes
    /// redelivery harmless.
    pub fn process(&mut self, record: &EventRecord) -> Vec<Alarm> {
        if self.has_seen(record) {
            return Vec::new();
        }
        self.state
            .next_offsets
            .insert(record.topic.clone(), record.offset + 1);

        let mut drafts = self.expire_episodes(record.time);
        let ev = EvidenceRef {
            topic: record.topic.clone(),
            offset: record.offset,
            time: record.time,
        };
        match &record.payload {
            Payload::AccessGranted(g) => self.on_grant(g, ev),
            Payload::DoorTransition(t) => self.on_transition(t, ev),
            Payload::SensorChange(n) => drafts.extend(self.on_sensor(n, ev)),
            Payload::DetectionSet(d) => drafts.extend(self.on_detections(d, ev)),
            Payload::FrameMeta(f) => drafts.extend(self.on_frame(f, ev)),
            Payload::DeviceLost(l) => drafts.extend(self.on_device_lost(l, ev)),
            Payload::Alarm(_) | Payload::AlarmUpdate(_) => self.state.skipped += 1,
        }
        drafts.into_iter().map(|d| self.stamp(d)).collect()
    }

    /// Closes episodes whose window ended before `time`; call at end of run.
    pub fn advance_to(&mut self, time: f64) -> Vec<Alarm> {
        let drafts = self.expire_episodes(time);
        drafts.into_iter().map(|d| self.stamp(d)).collect()
    }

    fn stamp(&mut self, d: AlarmDraft) -> Alarm {
        self.state.alarms_raised += 1;
        Alarm {
            alarm_id: format!("ALM-{:06}", self.state.alarms_raised),
            kind: d.kind,
            severity: self.cfg.severity(d.kind),
            time: d.time,
            camera_id: d.camera_id,
            room_id: d.room_id,
            door_id: d.door_id,
            source: d.source,
            confidence: d.confidence,
            evidence: d.evidence,
            state: AlarmState::Open,
            detail: d.detail,
        }
    }

    fn expire_episodes(&mut self, now: f64) -> Vec<AlarmDraft> {
        let cfg = &self.cfg;
        let expired: Vec<String> = self
            .state
            .open_episodes
            .iter()
            .filter(|(_, ep)| now > ep.deadline(cfg))
            .map(|(door, _)| door.clone())
            .collect();
        let mut out = Vec::new();
        for door in expired {
            let ep = self.state.open_episodes.remove(&door).expect("listed");
            out.extend(self.close_episode(ep));
        }
        out
    }

    fn close_episode(&mut self, ep: DoorEpisode) -> Option<AlarmDraft> {
        self.state.closed_episodes += 1;
        eval_tailgating(&ep, &self.cfg)
    }

    fn episode(&mut self, door: &str, time: f64) -> &mut DoorEpisode {
        self.state
            .open_episodes
            .entry(door.to_string())
            .or_insert_with(|| DoorEpisode::open(door, time))
    }

    fn on_grant(&mut self, g: &AccessGranted, ev: EvidenceRef) {
        let last = self.state.grant_seqs.entry(g.door_id.clone()).or_insert(0);
        if g.grant_seq != 0 && g.grant_seq <= *last {
            return;
        }
        *last = (*last).max(g.grant_seq);
        self.episode(&g.door_id, ev.time).grants.push(ev);
    }

    fn on_transition(&mut self, t: &DoorTransitionEvent, ev: EvidenceRef) {
        if let Some(ep) = self.state.open_episodes.get_mut(&t.door_id) {
            ep.transitions.push(ev);
        }
    }

    fn on_sensor(&mut self, n: &StateChangeNotification, ev: EvidenceRef) -> Vec<AlarmDraft> {
        // Any message from the sensor manager shows it is reachable again.
        self.state
            .lost_devices
            .retain(|d| !d.starts_with("sensor:"));
        let last_seq = self
            .state
            .sensor_seqs
            .get(&n.sensor_id)
            .copied()
            .unwrap_or(0);
        if !n.snapshot && n.seq != 0 && n.seq <= last_seq {
            return Vec::new();
        }
        self.state
            .sensor_seqs
            .insert(n.sensor_id.clone(), last_seq.max(n.seq));
        let known = self
            .state
            .sensor_values
            .insert(n.sensor_id.clone(), n.new_value.clone());
        if n.snapshot && known.as_ref().is_none_or(|k| *k == n.new_value) {
            return Vec::new();
        }

        let mut out = Vec::new();
        let room = self.site.sensor_room(&n.sensor_id).map(str::to_string);
        match (n.kind, &n.new_value) {
            (SensorKind::SmokeFire, SensorValue::Bool(on)) => {
                let key = room.clone().unwrap_or_else(|| n.sensor_id.clone());
                let state = self.state.fire_rooms.entry(key).or_default();
                if let Some(mut d) = eval_fire_sensor(state, &n.sensor_id, *on, ev, &self.cfg) {
                    d.room_id = room;
                    out.push(d);
                }
            }
            (SensorKind::Temperature, SensorValue::Celsius(c)) => {
                let hot = *c >= self.cfg.temp_alarm_c;
                out.extend(self.environment(n, room, hot, ev, format!("temperature {c:.1} C")));
            }
            (SensorKind::Flood, SensorValue::Bool(wet)) => {
                out.extend(self.environment(n, room, *wet, ev, "flood detected".to_string()));
            }
            (SensorKind::Power, SensorValue::Bool(on)) => {
                if *on {
                    self.state.power = PowerState::default();
                } else if !self.state.power.outage {
                    self.state.power.outage = true;
                    let mut d = AlarmDraft::new(AlarmKind::Power, ev.time, vec![ev]);
                    d.detail = format!("power sensor {} reports loss", n.sensor_id);
                    out.push(d);
                }
            }
            (SensorKind::DoorState, SensorValue::Door(mode)) => {
                let Some(door) = self.site.sensor_door(&n.sensor_id).map(str::to_string) else {
                    self.state.skipped += 1;
                    return out;
                };
                match mode {
                    DoorMode::Open => {
                        let ep = self.episode(&door, ev.time);
                        if ep.grants.is_empty() && ep.opened_by.is_none() {
                            ep.opened_by = Some(ev);
                        }
                    }
                    DoorMode::Closed | DoorMode::Locked => {
                        if let Some(mut ep) = self.state.open_episodes.remove(&door) {
                            ep.closed_at = Some(ev.time);
                            out.extend(self.close_episode(ep));
                        }
                    }
                }
            }
            // Grants arrive separately on the access topic.
            (SensorKind::DoorAccess, _) => {}
            _ => self.state.skipped += 1,
        }
        out
    }

    fn environment(
        &mut self,
        n: &StateChangeNotification,
        room: Option<String>,
        condition: bool,
        ev: EvidenceRef,
        detail: String,
    ) -> Option<AlarmDraft> {
        let mut active = self.state.environment_active.contains(&n.sensor_id);
        let draft = eval_environment(&mut active, condition, ev, detail);
        if active {
            self.state.environment_active.insert(n.sensor_id.clone());
        } else {
            self.state.environment_active.remove(&n.sensor_id);
        }
        draft.map(|mut d| {
            d.room_id = room;
            d
        })
    }

    fn on_detections(&mut self, d: &DetectionSet, ev: EvidenceRef) -> Vec<AlarmDraft> {
        let mut out = Vec::new();
        let room = self
            .site
            .camera_room(&d.camera_id)
            .map(str::to_string)
            .or_else(|| d.tracks.iter().find_map(|t| t.room.clone()));

        let crowd = self.state.crowd.entry(d.camera_id.clone()).or_default();
        if let Some(mut a) = eval_crowding(crowd, d.tracks.len(), ev.clone(), &self.cfg) {
            a.camera_id = Some(d.camera_id.clone());
            a.room_id = room.clone();
            out.push(a);
        }

        for t in &d.tracks {
            for (zone, &dwell) in &t.dwell {
                let key = format!("{}/{}/{}", d.camera_id, t.track_id, zone);
                if self.state.loitered.contains(&key)
                    || !eval_loitering(dwell, self.site.is_restricted(zone), &self.cfg)
                {
                    continue;
                }
                self.state.loitered.insert(key);
                let mut a = AlarmDraft::new(AlarmKind::Loitering, ev.time, vec![ev.clone()]);
                a.camera_id = Some(d.camera_id.clone());
                a.room_id = self
                    .site
                    .zones
                    .get(zone)
                    .map(|z| z.room.clone())
                    .or_else(|| room.clone());
                a.detail = format!("track {} in zone {zone} for {dwell:.1} s", t.track_id);
                out.push(a);
            }
        }

        let key = room.clone().unwrap_or_else(|| d.camera_id.clone());
        let cam = self
            .state
            .fire_cameras
            .entry(d.camera_id.clone())
            .or_default();
        let fire_room = self.state.fire_rooms.entry(key).or_default();
        if let Some(mut a) = eval_fire_visual(cam, fire_room, d.fire_score, ev, &self.cfg) {
            a.camera_id = Some(d.camera_id.clone());
            a.room_id = room;
            out.push(a);
        }
        out
    }

    fn on_frame(&mut self, f: &FrameMeta, ev: EvidenceRef) -> Vec<AlarmDraft> {
        self.state
            .lost_devices
            .remove(&format!("camera:{}", f.camera_id));
        let need = self.cfg.black_frame_confirmations as usize;
        let power = &mut self.state.power;
        if !f.all_black {
            power.black_streaks.remove(&f.camera_id);
            if power.black_streaks.is_empty() {
                power.outage = false;
            }
            return Vec::new();
        }
        let streak = power.black_streaks.entry(f.camera_id.clone()).or_default();
        if streak.len() < need {
            streak.push(ev.clone());
        }
        if power.outage {
            return Vec::new();
        }
        let confirmed: Vec<&Vec<EvidenceRef>> = power
            .black_streaks
            .values()
            .filter(|s| s.len() >= need)
            .collect();
        if confirmed.len() < self.cfg.black_frame_cameras as usize {
            return Vec::new();
        }
        let mut evidence: Vec<EvidenceRef> = confirmed.into_iter().flatten().cloned().collect();
        evidence.sort_by(|a, b| {
            a.time
                .total_cmp(&b.time)
                .then_with(|| a.topic.cmp(&b.topic))
        });
        power.outage = true;
        let mut d = AlarmDraft::new(AlarmKind::Power, ev.time, evidence);
        d.detail = "cameras report black frames".to_string();
        vec![d]
    }

    fn on_device_lost(&mut self, l: &DeviceLost, ev: EvidenceRef) -> Vec<AlarmDraft> {
        let prefix = match l.device {
            crate::events::DeviceKind::Camera => "camera",
            crate::events::DeviceKind::SensorManager => "sensor",
        };
        if !self
            .state
            .lost_devices
            .insert(format!("{prefix}:{}", l.device_id))
        {
            return Vec::new();
        }
        let mut d = AlarmDraft::new(AlarmKind::DeviceLost, ev.time, vec![ev]);
        if l.device == crate::events::DeviceKind::Camera {
            d.camera_id = Some(l.device_id.clone());
            d.room_id = self.site.camera_room(&l.device_id).map(str::to_string);
        }
        d.detail = format!(
            "{} unreachable after {} attempts: {}",
            l.device_id, l.failures, l.reason
        );
        vec![d]
    }
}
