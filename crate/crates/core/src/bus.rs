//! In-process topic broker: one ordered log per topic, consumer groups with
//! committed offsets, blocking polls and optional bounded backpressure.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::events::{topic_schema, EventRecord, Payload, PayloadKind};

#[derive(Debug, Error)]
pub enum BusError {
    #[error("topic `{0}` has no declared schema")]
    UnknownTopic(String),
    #[error("payload {kind} does not match the schema of topic `{topic}`")]
    SchemaMismatch { topic: String, kind: PayloadKind },
    #[error(
        "cannot commit offset {offset} for group `{group}` on `{topic}`: position is {position}"
    )]
    CommitBeyondPosition {
        group: String,
        topic: String,
        offset: u64,
        position: u64,
    },
}

#[derive(Debug, Error)]
pub enum DumpError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// A group's read handle on one topic. Use from one thread at a time.
#[derive(Debug, Clone)]
pub struct Consumer {
    group: String,
    topic: String,
    committed: u64,
    position: u64,
}

impl Consumer {
    pub fn group(&self) -> &str {
        &self.group
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn committed(&self) -> u64 {
        self.committed
    }

    pub fn position(&self) -> u64 {
        self.position
    }
}

#[derive(Default)]
struct State {
    topics: BTreeMap<String, Vec<Arc<EventRecord>>>,
    /// `(topic, group)` → committed offset.
    committed: BTreeMap<(String, String), u64>,
    next_seq: u64,
}

impl State {
    fn log(&mut self, topic: &str) -> &mut Vec<Arc<EventRecord>> {
        self.topics.entry(topic.to_string()).or_default()
    }

    fn slowest_commit(&self, topic: &str) -> Option<u64> {
        self.committed
            .iter()
            .filter(|((t, _), _)| t == topic)
            .map(|(_, &off)| off)
            .min()
    }
}

struct Shared {
    state: Mutex<State>,
    changed: Condvar,
    capacity: Option<usize>,
}

/// Cheap to clone; clones share the same logs.
#[derive(Clone)]
pub struct Broker {
    shared: Arc<Shared>,
}

impl Default for Broker {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for Broker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Broker")
            .field("capacity", &self.shared.capacity)
            .finish_non_exhaustive()
    }
}

impl Broker {
    pub fn new() -> Self {
        Self::build(None)
    }

    /// Publishers block while a topic holds `capacity` or more records beyond
    /// the slowest subscribed group's commit.
    pub fn with_capacity(capacity: usize) -> Self {
        Self::build(Some(capacity.max(1)))
    }

    fn build(capacity: Option<usize>) -> Self {
        Self {
            shared: Arc::new(Shared {
                state: Mutex::new(State::default()),
                changed: Condvar::new(),
                capacity,
            }),
        }
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.shared.state.lock().expect("broker state poisoned")
    }

    pub fn publish(
        &self,
        topic: &str,
        key: &str,
        time: f64,
        payload: Payload,
    ) -> Result<u64, BusError> {
        self.publish_record(topic, key, time, payload)
            .map(|r| r.offset)
    }

    pub fn publish_record(
        &self,
        topic: &str,
        key: &str,
        time: f64,
        payload: Payload,
    ) -> Result<Arc<EventRecord>, BusError> {
        let schema =
            topic_schema(topic).ok_or_else(|| BusError::UnknownTopic(topic.to_string()))?;
        let kind = payload.kind();
        if !schema.contains(&kind) {
            return Err(BusError::SchemaMismatch {
                topic: topic.to_string(),
                kind,
            });
        }
        let mut state = self.lock();
        if let Some(cap) = self.shared.capacity {
            loop {
                let len = state.topics.get(topic).map_or(0, Vec::len) as u64;
                match state.slowest_commit(topic) {
                    Some(floor) if len - floor.min(len) >= cap as u64 => {
                        state = self
                            .shared
                            .changed
                            .wait(state)
                            .expect("broker state poisoned");
                    }
                    _ => break,
                }
            }
        }
        let seq = state.next_seq;
        state.next_seq += 1;
        let log = state.log(topic);
        let record = Arc::new(EventRecord {
            topic: topic.to_string(),
            offset: log.len() as u64,
            key: key.to_string(),
            time,
            seq,
            payload,
        });
        log.push(Arc::clone(&record));
        drop(state);
        self.shared.changed.notify_all();
        Ok(record)
    }

    /// Starts at the group's committed offset, creating the topic if needed.
    pub fn subscribe(&self, topic: &str, group: &str) -> Consumer {
        let mut state = self.lock();
        state.log(topic);
        let committed = *state
            .committed
            .entry((topic.to_string(), group.to_string()))
            .or_insert(0);
        Consumer {
            group: group.to_string(),
            topic: topic.to_string(),
            committed,
            position: committed,
        }
    }

    /// Up to `max` records from the consumer's position, waiting up to
    /// `timeout` for the first one.
    pub fn poll(
        &self,
        consumer: &mut Consumer,
        max: usize,
        timeout: Duration,
    ) -> Vec<Arc<EventRecord>> {
        let deadline = Instant::now() + timeout;
        let mut state = self.lock();
        loop {
            let log = state
                .topics
                .get(&consumer.topic)
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            let start = consumer.position as usize;
            if start < log.len() {
                let end = log.len().min(start + max);
                let out: Vec<_> = log[start..end].to_vec();
                consumer.position = end as u64;
                return out;
            }
            let now = Instant::now();
            if now >= deadline || max == 0 {
                return Vec::new();
            }
            state = self
                .shared
                .changed
                .wait_timeout(state, deadline - now)
                .expect("broker state poisoned")
                .0;
        }
    }

    /// Polls several consumers under one lock and returns up to `max` records
    /// in global publication order. Each consumer advances only past the
    /// records actually returned from its topic.
    pub fn poll_merged(
        &self,
        consumers: &mut [Consumer],
        max: usize,
        timeout: Duration,
    ) -> Vec<Arc<EventRecord>> {
        let deadline = Instant::now() + timeout;
        let mut state = self.lock();
        loop {
            let mut pending: Vec<(usize, &Arc<EventRecord>)> = Vec::new();
            for (i, c) in consumers.iter().enumerate() {
                let log = state.topics.get(&c.topic).map(Vec::as_slice).unwrap_or(&[]);
                let start = (c.position as usize).min(log.len());
                pending.extend(log[start..].iter().map(|r| (i, r)));
            }
            if !pending.is_empty() && max > 0 {
                pending.sort_by_key(|(_, r)| r.seq);
                pending.truncate(max);
                let out: Vec<Arc<EventRecord>> =
                    pending.iter().map(|(_, r)| Arc::clone(r)).collect();
                for (i, r) in pending {
                    consumers[i].position = consumers[i].position.max(r.offset + 1);
                }
                return out;
            }
            let now = Instant::now();
            if now >= deadline || max == 0 {
                return Vec::new();
            }
            state = self
                .shared
                .changed
                .wait_timeout(state, deadline - now)
                .expect("broker state poisoned")
                .0;
        }
    }

    pub fn commit(&self, consumer: &mut Consumer, offset: u64) -> Result<(), BusError> {
        if offset > consumer.position {
            return Err(BusError::CommitBeyondPosition {
                group: consumer.group.clone(),
                topic: consumer.topic.clone(),
                offset,
                position: consumer.position,
            });
        }
        let mut state = self.lock();
        state
            .committed
            .insert((consumer.topic.clone(), consumer.group.clone()), offset);
        consumer.committed = offset;
        drop(state);
        self.shared.changed.notify_all();
        Ok(())
    }

    /// Commits everything polled so far.
    pub fn commit_position(&self, consumer: &mut Consumer) -> Result<(), BusError> {
        let pos = consumer.position;
        self.commit(consumer, pos)
    }

    pub fn topic_len(&self, topic: &str) -> u64 {
        self.lock().topics.get(topic).map_or(0, |l| l.len() as u64)
    }

    pub fn topics(&self) -> Vec<String> {
        self.lock().topics.keys().cloned().collect()
    }

    pub fn records(&self, topic: &str) -> Vec<Arc<EventRecord>> {
        self.lock().topics.get(topic).cloned().unwrap_or_default()
    }

    pub fn record(&self, topic: &str, offset: u64) -> Option<Arc<EventRecord>> {
        self.lock()
            .topics
            .get(topic)
            .and_then(|l| l.get(offset as usize).cloned())
    }

    pub fn committed_offset(&self, topic: &str, group: &str) -> Option<u64> {
        self.lock()
            .committed
            .get(&(topic.to_string(), group.to_string()))
            .copied()
    }

    /// Writes `<dir>/<topic>.jsonl` for every topic, including empty ones.
    pub fn dump_all(&self, dir: &Path) -> Result<Vec<PathBuf>, DumpError> {
        let snapshot: Vec<(String, Vec<Arc<EventRecord>>)> = self
            .lock()
            .topics
            .iter()
            .map(|(t, l)| (t.clone(), l.clone()))
            .collect();
        let mut paths = Vec::new();
        for (topic, records) in snapshot {
            let path = dir.join(format!("{topic}.jsonl"));
            write_jsonl(&path, records.iter().map(|r| r.as_ref()))?;
            paths.push(path);
        }
        Ok(paths)
    }
}

pub fn write_jsonl<'a, T, I>(path: &Path, items: I) -> Result<(), DumpError>
where
    T: serde::Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let io_err = |source| DumpError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| io_err(io::Error::other(e)))?;
        out.write_all(line.as_bytes()).map_err(io_err)?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Reads a line-delimited dump. Blank lines are skipped; any other
/// unparsable line, including a truncated last line, is an error naming it.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, DumpError> {
    let file = File::open(path).map_err(|source| DumpError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| DumpError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| DumpError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn read_dump(path: &Path) -> Result<Vec<EventRecord>, DumpError> {
    let records: Vec<EventRecord> = read_jsonl(path)?;
    for (i, r) in records.iter().enumerate() {
        if r.offset != i as u64 {
            return Err(DumpError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected offset {i}, found {}", r.offset),
            });
        }
    }
    Ok(records)
}
