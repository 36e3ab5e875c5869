//! Alarm store behind the operator API: raised alarms, operator commands and
//! filtered, paginated queries.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use vigil_core::alarm::{Alarm, AlarmKind, AlarmState, AlarmUpdate, IllegalTransition};
use vigil_core::bus::{Broker, BusError};
use vigil_core::events::{Payload, TOPIC_ALARMS};

use crate::hub::SimClock;
use crate::registry::{ConsoleEvent, Registry};

pub const DEFAULT_PAGE: usize = 100;
pub const MAX_PAGE: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Acknowledge,
    Reject,
}

impl Verb {
    fn target(self) -> AlarmState {
        match self {
            Verb::Acknowledge => AlarmState::Acknowledged,
            Verb::Reject => AlarmState::Rejected,
        }
    }
}

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("unknown alarm `{0}`")]
    NotFound(String),
    #[error(transparent)]
    Illegal(#[from] IllegalTransition),
    #[error(transparent)]
    Bus(#[from] BusError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad filter `{field}`: {message}")]
pub struct FilterError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlarmFilter {
    pub state: Option<AlarmState>,
    pub kind: Option<AlarmKind>,
    /// Inclusive lower bound on raise time.
    pub since: Option<f64>,
    /// Inclusive upper bound on raise time.
    pub until: Option<f64>,
    /// Cursor: return alarms strictly after this one in (time, id) order.
    pub after: Option<String>,
    pub limit: Option<usize>,
}

impl AlarmFilter {
    /// Parses query-string pairs; unknown keys are rejected.
    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, FilterError> {
        let mut f = AlarmFilter::default();
        for (k, v) in pairs {
            let bad = |message: String| FilterError {
                field: k.to_string(),
                message,
            };
            match k {
                "state" => f.state = Some(v.parse().map_err(bad)?),
                "type" => f.kind = Some(v.parse().map_err(bad)?),
                "since" => f.since = Some(parse_time(v).map_err(bad)?),
                "until" => f.until = Some(parse_time(v).map_err(bad)?),
                "after" => f.after = Some(v.to_string()),
                "limit" => {
                    let n: usize = v
                        .parse()
                        .map_err(|_| bad(format!("`{v}` is not a count")))?;
                    if n == 0 || n > MAX_PAGE {
                        return Err(bad(format!("must be in 1..={MAX_PAGE}")));
                    }
                    f.limit = Some(n);
                }
                _ => return Err(bad("unknown filter".into())),
            }
        }
        if let (Some(a), Some(b)) = (f.since, f.until) {
            if a > b {
                return Err(FilterError {
                    field: "since".into(),
                    message: "is after `until`".into(),
                });
            }
        }
        Ok(f)
    }

    fn matches(&self, a: &Alarm) -> bool {
        self.state.is_none_or(|s| a.state == s)
            && self.kind.is_none_or(|k| a.kind == k)
            && self.since.is_none_or(|t| a.time >= t)
            && self.until.is_none_or(|t| a.time <= t)
    }
}

fn parse_time(v: &str) -> Result<f64, String> {
    v.parse::<f64>()
        .ok()
        .filter(|t| t.is_finite())
        .ok_or_else(|| format!("`{v}` is not a time in seconds"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmPage {
    pub alarms: Vec<Alarm>,
    /// Cursor for the next page, if there is one.
    pub next_after: Option<String>,
}

fn raise_order(a: &Alarm, b: &Alarm) -> Ordering {
    a.time
        .total_cmp(&b.time)
        .then_with(|| a.alarm_id.cmp(&b.alarm_id))
}

#[derive(Debug, Default)]
struct Inner {
    alarms: BTreeMap<String, Alarm>,
    /// In publication order.
    raised: Vec<String>,
    updates: Vec<AlarmUpdate>,
}

#[derive(Debug)]
pub struct AlarmStore {
    inner: Mutex<Inner>,
    broker: Broker,
    registry: Arc<Registry>,
    clock: SimClock,
}

impl AlarmStore {
    pub fn new(broker: Broker, registry: Arc<Registry>, clock: SimClock) -> Self {
        Self {
            inner: Mutex::default(),
            broker,
            registry,
            clock,
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().expect("alarm store poisoned")
    }

    pub fn contains(&self, alarm_id: &str) -> bool {
        self.lock().alarms.contains_key(alarm_id)
    }

    /// Publishes a newly raised alarm and records it. A repeat of a known id
    /// (replay after a crash) is dropped, keeping the alarm log duplicate-free.
    pub fn raise(&self, alarm: Alarm) -> Result<bool, BusError> {
        let mut inner = self.lock();
        if inner.alarms.contains_key(&alarm.alarm_id) {
            return Ok(false);
        }
        self.broker.publish(
            TOPIC_ALARMS,
            &alarm.alarm_id,
            alarm.time,
            Payload::Alarm(alarm.clone()),
        )?;
        inner.raised.push(alarm.alarm_id.clone());
        inner.alarms.insert(alarm.alarm_id.clone(), alarm.clone());
        drop(inner);
        self.registry.publish(ConsoleEvent::Alarm { alarm });
        Ok(true)
    }

    pub fn command(
        &self,
        alarm_id: &str,
        verb: Verb,
        operator: &str,
    ) -> Result<Alarm, CommandError> {
        let mut inner = self.lock();
        let current = inner
            .alarms
            .get(alarm_id)
            .ok_or_else(|| CommandError::NotFound(alarm_id.to_string()))?;
        let next = current.transition(verb.target())?;
        let update = AlarmUpdate {
            alarm_id: alarm_id.to_string(),
            from: current.state,
            to: next.state,
            operator: operator.to_string(),
            wall_time_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_millis() as u64),
        };
        self.broker.publish(
            TOPIC_ALARMS,
            alarm_id,
            self.clock.now(),
            Payload::AlarmUpdate(update.clone()),
        )?;
        inner.alarms.insert(alarm_id.to_string(), next.clone());
        inner.updates.push(update.clone());
        drop(inner);
        self.registry.publish(ConsoleEvent::AlarmUpdate {
            alarm: next.clone(),
            update,
        });
        Ok(next)
    }

    pub fn get(&self, alarm_id: &str) -> Option<Alarm> {
        self.lock().alarms.get(alarm_id).cloned()
    }

    /// Current state of every alarm, in raise-time order.
    pub fn all(&self) -> Vec<Alarm> {
        let mut v: Vec<Alarm> = self.lock().alarms.values().cloned().collect();
        v.sort_by(raise_order);
        v
    }

    /// Alarms as first raised, in publication order.
    pub fn raised_log(&self) -> Vec<Alarm> {
        let inner = self.lock();
        inner
            .raised
            .iter()
            .filter_map(|id| inner.alarms.get(id))
            .map(|a| Alarm {
                state: AlarmState::Open,
                ..a.clone()
            })
            .collect()
    }

    pub fn updates(&self) -> Vec<AlarmUpdate> {
        self.lock().updates.clone()
    }

    pub fn query(&self, filter: &AlarmFilter) -> AlarmPage {
        let all = self.all();
        let start = match &filter.after {
            Some(cursor) => match all.iter().position(|a| &a.alarm_id == cursor) {
                Some(i) => i + 1,
                None => all.len(),
            },
            None => 0,
        };
        let limit = filter.limit.unwrap_or(DEFAULT_PAGE);
        let mut matching = all[start..].iter().filter(|a| filter.matches(a));
        let alarms: Vec<Alarm> = matching.by_ref().take(limit).cloned().collect();
        let more = matching.next().is_some();
        AlarmPage {
            next_after: more
                .then(|| alarms.last().map(|a| a.alarm_id.clone()))
                .flatten(),
            alarms,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use vigil_core::alarm::EvidenceRef;

    fn alarm(id: &str, kind: AlarmKind, time: f64) -> Alarm {
        Alarm {
            alarm_id: id.into(),
            kind,
            severity: 3,
            time,
            camera_id: None,
            room_id: None,
            door_id: None,
            source: None,
            confidence: None,
            evidence: vec![EvidenceRef {
                topic: "events.door".into(),
                offset: 0,
                time,
            }],
            state: AlarmState::Open,
            detail: String::new(),
        }
    }

    fn store() -> AlarmStore {
        AlarmStore::new(
            Broker::new(),
            Arc::new(Registry::new(vec![], vec![])),
            SimClock::default(),
        )
    }

    #[test]
    fn commands_follow_the_state_machine() {
        let s = store();
        s.raise(alarm("ALM-000001", AlarmKind::Fire, 3.0)).unwrap();
        let a = s.command("ALM-000001", Verb::Acknowledge, "ops").unwrap();
        assert_eq!(a.state, AlarmState::Acknowledged);
        assert!(matches!(
            s.command("ALM-000001", Verb::Reject, "ops"),
            Err(CommandError::Illegal(_))
        ));
        assert!(matches!(
            s.command("ALM-9", Verb::Acknowledge, "ops"),
            Err(CommandError::NotFound(_))
        ));
        assert_eq!(s.updates().len(), 1);
        assert_eq!(s.raised_log()[0].state, AlarmState::Open);
    }

    #[test]
    fn duplicate_raise_is_dropped() {
        let s = store();
        assert!(s.raise(alarm("ALM-000001", AlarmKind::Fire, 3.0)).unwrap());
        assert!(!s.raise(alarm("ALM-000001", AlarmKind::Fire, 3.0)).unwrap());
        assert_eq!(s.broker.topic_len(TOPIC_ALARMS), 1);
    }

    #[test]
    fn pages_are_stable_in_time_then_id_order() {
        let s = store();
        for (id, t) in [
            ("ALM-000003", 1.0),
            ("ALM-000001", 2.0),
            ("ALM-000002", 1.0),
            ("ALM-000004", 5.0),
        ] {
            s.raise(alarm(id, AlarmKind::Crowding, t)).unwrap();
        }
        let mut f = AlarmFilter {
            limit: Some(3),
            ..Default::default()
        };
        let p1 = s.query(&f);
        let ids: Vec<_> = p1.alarms.iter().map(|a| a.alarm_id.as_str()).collect();
        assert_eq!(ids, ["ALM-000002", "ALM-000003", "ALM-000001"]);
        f.after = p1.next_after;
        let p2 = s.query(&f);
        assert_eq!(p2.alarms.len(), 1);
        assert_eq!(p2.next_after, None);
    }

    #[test]
    fn filters() {
        let s = store();
        assert!(s.query(&AlarmFilter::default()).alarms.is_empty());
        s.raise(alarm("ALM-000001", AlarmKind::Fire, 3.0)).unwrap();
        s.raise(alarm("ALM-000002", AlarmKind::Power, 4.0)).unwrap();
        let f = AlarmFilter::from_pairs([("state", "open"), ("type", "fire")]).unwrap();
        assert_eq!(s.query(&f).alarms.len(), 1);
        let f = AlarmFilter::from_pairs([("since", "10"), ("until", "20")]).unwrap();
        assert!(s.query(&f).alarms.is_empty());
        for bad in [
            ("state", "closed"),
            ("since", "soon"),
            ("limit", "0"),
            ("colour", "red"),
        ] {
            assert!(AlarmFilter::from_pairs([bad]).is_err(), "{bad:?}");
        }
        assert!(AlarmFilter::from_pairs([("since", "5"), ("until", "1")]).is_err());
    }
}
