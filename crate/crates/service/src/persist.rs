//! Run directory layout, the run report, and offline replay of persisted
//! topic dumps through a fresh rule engine.
//!
//! ```text
//! <run dir>/
//!   topics/<topic>.jsonl   every broker topic, one record per line
//!   alarms.jsonl           alarms as raised, in publication order
//!   site.json              rule config, site context and end time
//!   engine_state.json      rule-engine checkpoint at the last commit
//!   report.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use vigil_core::alarm::{Alarm, AlarmKind};
use vigil_core::bus::{read_dump, read_jsonl, write_jsonl, Broker, DumpError};
use vigil_core::events::{EventRecord, TOPIC_ALARMS};
use vigil_core::rules::{EngineState, RuleConfig, RuleConfigError, RuleEngine, SiteContext};

use crate::config::RunMode;

pub const TOPICS_DIR: &str = "topics";
pub const ALARMS_FILE: &str = "alarms.jsonl";
pub const SITE_FILE: &str = "site.json";
pub const CHECKPOINT_FILE: &str = "engine_state.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error(transparent)]
    Dump(#[from] DumpError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error("{0} is not a run directory (no {TOPICS_DIR}/)")]
    NotARun(PathBuf),
    #[error(transparent)]
    Rules(#[from] RuleConfigError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Static inputs a replay needs besides the topic dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRecord {
    pub rules: RuleConfig,
    pub site: SiteContext,
    /// Sim time the live run flushed its correlation windows at.
    pub end_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmLatency {
    pub alarm_id: String,
    #[serde(rename = "type")]
    pub kind: AlarmKind,
    pub time: f64,
    /// Sim seconds from the earliest evidence record to the alarm.
    pub latency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub mode: RunMode,
    pub ticks: u64,
    pub sim_seconds: f64,
    pub wall_clock_seconds: f64,
    pub interrupted: bool,
    pub alarms_total: u64,
    /// Every alarm type, zero counts included.
    pub alarms_by_type: BTreeMap<String, u64>,
    pub alarm_latencies: Vec<AlarmLatency>,
    pub event_counts: BTreeMap<String, u64>,
}

/// Run metadata that is not derivable from the logs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunHeader {
    pub scenario: String,
    pub seed: u64,
    pub mode: RunMode,
    pub ticks: u64,
    pub sim_seconds: f64,
    pub wall_clock_seconds: f64,
    pub interrupted: bool,
}

impl RunReport {
    pub fn summarize(
        header: RunHeader,
        alarms: &[Alarm],
        event_counts: BTreeMap<String, u64>,
    ) -> Self {
        let mut by_type: BTreeMap<String, u64> = AlarmKind::ALL
            .iter()
            .map(|k| (k.as_str().to_string(), 0))
            .collect();
        for a in alarms {
            *by_type.entry(a.kind.as_str().to_string()).or_default() += 1;
        }
        RunReport {
            scenario: header.scenario,
            seed: header.seed,
            mode: header.mode,
            ticks: header.ticks,
            sim_seconds: header.sim_seconds,
            wall_clock_seconds: header.wall_clock_seconds,
            interrupted: header.interrupted,
            alarms_total: alarms.len() as u64,
            alarms_by_type: by_type,
            alarm_latencies: alarms
                .iter()
                .map(|a| AlarmLatency {
                    alarm_id: a.alarm_id.clone(),
                    kind: a.kind,
                    time: a.time,
                    latency: a.latency(),
                })
                .collect(),
            event_counts,
        }
    }

    pub fn alarms_of(&self, kind: AlarmKind) -> u64 {
        self.alarms_by_type.get(kind.as_str()).copied().unwrap_or(0)
    }
}

/// Writes to a sibling temp file and renames it into place, so a reader
/// never sees a torn file.
pub fn write_atomic(
    path: &Path,
    write: impl FnOnce(&Path) -> Result<(), PersistError>,
) -> Result<(), PersistError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    write(&tmp)?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PersistError> {
    write_atomic(path, |tmp| {
        let text = serde_json::to_string_pretty(value).map_err(|e| PersistError::Json {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut f = fs::File::create(tmp).map_err(io_err(tmp))?;
        f.write_all(text.as_bytes()).map_err(io_err(tmp))?;
        f.write_all(b"\n").map_err(io_err(tmp))?;
        f.sync_all().map_err(io_err(tmp))
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PersistError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PersistError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub struct RunArtifacts<'a> {
    pub broker: &'a Broker,
    pub alarms: &'a [Alarm],
    pub site: &'a SiteRecord,
    pub checkpoint: &'a EngineState,
    pub report: &'a RunReport,
}

pub fn persist_run(dir: &Path, run: &RunArtifacts<'_>) -> Result<(), PersistError> {
    let topics = dir.join(TOPICS_DIR);
    fs::create_dir_all(&topics).map_err(io_err(&topics))?;
    for topic in run.broker.topics() {
        let records = run.broker.records(&topic);
        let path = topics.join(format!("{topic}.jsonl"));
        write_atomic(&path, |tmp| {
            Ok(write_jsonl(tmp, records.iter().map(|r| r.as_ref()))?)
        })?;
    }
    let alarms = dir.join(ALARMS_FILE);
    write_atomic(&alarms, |tmp| Ok(write_jsonl(tmp, run.alarms)?))?;
    write_json(&dir.join(SITE_FILE), run.site)?;
    write_json(&dir.join(CHECKPOINT_FILE), run.checkpoint)?;
    write_json(&dir.join(REPORT_FILE), run.report)
}

/// Every persisted topic dump, keyed by topic name.
pub fn read_topics(dir: &Path) -> Result<BTreeMap<String, Vec<EventRecord>>, PersistError> {
    let topics = dir.join(TOPICS_DIR);
    if !topics.is_dir() {
        return Err(PersistError::NotARun(dir.to_path_buf()));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&topics)
        .map_err(io_err(&topics))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    let mut out = BTreeMap::new();
    for p in paths {
        let topic = p
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        out.insert(topic, read_dump(&p)?);
    }
    Ok(out)
}

/// Rewrites alarm ids as `ALM-1, ALM-2, ...` in list order so logs from
/// different numbering schemes compare equal.
pub fn normalize_ids(alarms: &[Alarm]) -> Vec<Alarm> {
    alarms
        .iter()
        .enumerate()
        .map(|(i, a)| Alarm {
            alarm_id: format!("ALM-{}", i + 1),
            ..a.clone()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub replayed: Vec<Alarm>,
    pub original: Vec<Alarm>,
    pub records: u64,
}

impl ReplayOutcome {
    pub fn matches(&self) -> bool {
        normalize_ids(&self.replayed) == normalize_ids(&self.original)
    }
}

/// Feeds the persisted input topics, merged in publication order, through a
/// fresh rule engine and returns its alarms next to the persisted log.
pub fn replay(dir: &Path) -> Result<ReplayOutcome, PersistError> {
    let topics = read_topics(dir)?;
    let site_path = dir.join(SITE_FILE);
    let site: SiteRecord = if site_path.exists() {
        read_json(&site_path)?
    } else {
        SiteRecord {
            rules: RuleConfig::default(),
            site: SiteContext::default(),
            end_time: 0.0,
        }
    };
    let mut records: Vec<EventRecord> = topics
        .into_iter()
        .filter(|(t, _)| t != TOPIC_ALARMS)
        .flat_map(|(_, r)| r)
        .collect();
    records.sort_by_key(|r| r.seq);
    let mut engine = RuleEngine::new(site.rules, site.site)?;
    let mut replayed = Vec::new();
    for r in &records {
        replayed.extend(engine.process(r));
    }
    replayed.extend(engine.advance_to(site.end_time));
    let alarms_path = dir.join(ALARMS_FILE);
    let original = if alarms_path.exists() {
        read_jsonl(&alarms_path)?
    } else {
        Vec::new()
    };
    Ok(ReplayOutcome {
        replayed,
        original,
        records: records.len() as u64,
    })
}

/// Reads the stored report, checking its counts against the logs.
pub fn report(dir: &Path) -> Result<(RunReport, Vec<String>), PersistError> {
    let stored: RunReport = read_json(&dir.join(REPORT_FILE))?;
    let topics = read_topics(dir)?;
    let alarms: Vec<Alarm> = read_jsonl(&dir.join(ALARMS_FILE))?;
    let counts: BTreeMap<String, u64> = topics
        .iter()
        .map(|(t, r)| (t.clone(), r.len() as u64))
        .collect();
    let header = RunHeader {
        scenario: stored.scenario.clone(),
        seed: stored.seed,
        mode: stored.mode,
        ticks: stored.ticks,
        sim_seconds: stored.sim_seconds,
        wall_clock_seconds: stored.wall_clock_seconds,
        interrupted: stored.interrupted,
    };
    let derived = RunReport::summarize(header, &alarms, counts);
    let mut mismatches = Vec::new();
    if derived.alarms_by_type != stored.alarms_by_type {
        mismatches.push("alarms_by_type".to_string());
    }
    if derived.event_counts != stored.event_counts {
        mismatches.push("event_counts".to_string());
    }
    if derived.alarm_latencies != stored.alarm_latencies {
        mismatches.push("alarm_latencies".to_string());
    }
    Ok((stored, mismatches))
}

#[cfg(test)]
mod tests {
    use super::*;
    use vigil_core::alarm::{AlarmState, EvidenceRef};

    fn alarm(id: &str, kind: AlarmKind, time: f64, evidence_time: f64) -> Alarm {
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
                time: evidence_time,
            }],
            state: AlarmState::Open,
            detail: String::new(),
        }
    }

    fn header() -> RunHeader {
        RunHeader {
            scenario: "s".into(),
            seed: 1,
            mode: RunMode::Fast,
            ticks: 10,
            sim_seconds: 1.0,
            wall_clock_seconds: 0.1,
            interrupted: false,
        }
    }

    #[test]
    fn summary_counts_every_type_and_latency() {
        let alarms = [
            alarm("ALM-000001", AlarmKind::Fire, 5.0, 4.5),
            alarm("ALM-000002", AlarmKind::Fire, 7.0, 7.0),
        ];
        let r = RunReport::summarize(header(), &alarms, BTreeMap::new());
        assert_eq!(r.alarms_by_type.len(), AlarmKind::ALL.len());
        assert_eq!(r.alarms_of(AlarmKind::Fire), 2);
        assert_eq!(r.alarms_of(AlarmKind::Power), 0);
        assert_eq!(r.alarm_latencies[0].latency, 0.5);
        assert_eq!(r.alarm_latencies[1].latency, 0.0);
    }

    #[test]
    fn normalized_ids_ignore_numbering() {
        let a = [alarm("ALM-000007", AlarmKind::Power, 1.0, 1.0)];
        let b = [alarm("X", AlarmKind::Power, 1.0, 1.0)];
        assert_eq!(normalize_ids(&a), normalize_ids(&b));
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        write_json(&path, &vec![1, 2, 3]).unwrap();
        let back: Vec<i32> = read_json(&path).unwrap();
        assert_eq!(back, [1, 2, 3]);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn missing_topics_dir_is_not_a_run() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(replay(dir.path()), Err(PersistError::NotARun(_))));
    }
}
