//! Rule-engine consumer: merges its input topics in publication order, raises
//! alarms through the store and commits offsets together with an engine
//! checkpoint.

use std::sync::Arc;
use std::time::Duration;

use vigil_core::alarm::Alarm;
use vigil_core::bus::{Broker, BusError, Consumer};
use vigil_core::events::{detections_topic, frames_topic, TOPIC_ACCESS, TOPIC_DOOR, TOPIC_SENSOR};
use vigil_core::rules::{EngineState, RuleConfig, RuleConfigError, RuleEngine, SiteContext};

use crate::alarms::AlarmStore;

pub const RULES_GROUP: &str = "rules";
const BATCH: usize = 512;

/// Topics the rule engine reads for the given cameras.
pub fn rule_topics<'a>(cameras: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut topics: Vec<String> = cameras
        .into_iter()
        .flat_map(|c| [frames_topic(c), detections_topic(c)])
        .collect();
    topics.extend([TOPIC_DOOR, TOPIC_SENSOR, TOPIC_ACCESS].map(String::from));
    topics
}

pub struct RuleWorker {
    engine: RuleEngine,
    consumers: Vec<Consumer>,
    broker: Broker,
    store: Arc<AlarmStore>,
    /// Engine state as of the last commit.
    checkpoint: EngineState,
    processed: u64,
}

impl std::fmt::Debug for RuleWorker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RuleWorker")
            .field(
                "topics",
                &self
                    .consumers
                    .iter()
                    .map(Consumer::topic)
                    .collect::<Vec<_>>(),
            )
            .field("processed", &self.processed)
            .finish_non_exhaustive()
    }
}

impl RuleWorker {
    pub fn new(
        cfg: RuleConfig,
        site: SiteContext,
        topics: &[String],
        broker: Broker,
        store: Arc<AlarmStore>,
    ) -> Result<Self, RuleConfigError> {
        Self::resume(cfg, site, EngineState::default(), topics, broker, store)
    }

    /// Restarts from a checkpoint; the group's committed offsets say where
    /// reading resumes, and records after them are processed again.
    pub fn resume(
        cfg: RuleConfig,
        site: SiteContext,
        checkpoint: EngineState,
        topics: &[String],
        broker: Broker,
        store: Arc<AlarmStore>,
    ) -> Result<Self, RuleConfigError> {
        let engine = RuleEngine::restore(cfg, site, checkpoint.clone())?;
        let consumers = topics
            .iter()
            .map(|t| broker.subscribe(t, RULES_GROUP))
            .collect();
        Ok(Self {
            engine,
            consumers,
            broker,
            store,
            checkpoint,
            processed: 0,
        })
    }

    pub fn engine(&self) -> &RuleEngine {
        &self.engine
    }

    pub fn checkpoint(&self) -> &EngineState {
        &self.checkpoint
    }

    /// Records handed to the engine by this worker, including redeliveries.
    pub fn processed(&self) -> u64 {
        self.processed
    }

    /// Processes one batch without committing. Exposed for crash tests.
    pub fn process_batch(&mut self, max: usize, timeout: Duration) -> Result<usize, BusError> {
        let batch = self.broker.poll_merged(&mut self.consumers, max, timeout);
        for record in &batch {
            self.processed += 1;
            for alarm in self.engine.process(record) {
                self.raise(alarm)?;
            }
        }
        Ok(batch.len())
    }

    fn raise(&self, alarm: Alarm) -> Result<(), BusError> {
        tracing::info!(id = %alarm.alarm_id, kind = %alarm.kind.as_str(), time = alarm.time, "alarm raised");
        self.store.raise(alarm)?;
        Ok(())
    }

    pub fn commit(&mut self) -> Result<(), BusError> {
        for c in &mut self.consumers {
            self.broker.commit_position(c)?;
        }
        self.checkpoint = self.engine.state().clone();
        Ok(())
    }

    /// Processes everything available, waiting up to `timeout` for the first
    /// record, committing after each batch.
    pub fn drain(&mut self, timeout: Duration) -> Result<usize, BusError> {
        let mut total = 0;
        let mut wait = timeout;
        loop {
            let n = self.process_batch(BATCH, wait)?;
            if n == 0 {
                return Ok(total);
            }
            total += n;
            self.commit()?;
            wait = Duration::ZERO;
        }
    }

    /// Closes correlation windows that ended by `time`.
    pub fn flush(&mut self, time: f64) -> Result<usize, BusError> {
        let alarms = self.engine.advance_to(time);
        let n = alarms.len();
        for a in alarms {
            self.raise(a)?;
        }
        self.checkpoint = self.engine.state().clone();
        Ok(n)
    }
}
