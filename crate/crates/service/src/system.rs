//! Orchestrator: owns the tick loop and wires world, device servers,
//! gateway, analytics, rules, alarm store and the operator API.
//!
//! In fast mode every device exchange for a tick finishes before the next
//! tick is produced, which makes whole runs reproducible byte for byte. In
//! realtime mode ticks follow the wall clock and device workers run freely.

use std::collections::BTreeMap;
use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures_util::future::join_all;
use futures_util::FutureExt;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;
use vigil_core::analytics::CameraAnalytics;
use vigil_core::bus::{Broker, BusError};
use vigil_core::vdevices::{ControlQueue, SensorKind};
use vigil_core::world::{ScenarioScript, World, WorldState};

use crate::alarms::AlarmStore;
use crate::config::{ConfigError, IngestMode, RunMode, SystemConfig};
use crate::console::{self, ConsoleState};
use crate::gateway::{
    CameraIngest, Clock, FetchOutcome, IngestError, LinkError, PtzForwarder, SensorIngest,
    TokioClock,
};
use crate::hub::{SimClock, SnapshotHub};
use crate::persist::{self, PersistError, RunArtifacts, RunHeader, RunReport, SiteRecord};
use crate::registry::{CameraStatus, Registry, SensorStatus};
use crate::servers::{self, AlarmManager, CameraDevice, Served};
use crate::worker::{rule_topics, RuleWorker};

/// How long a lockstep tick waits for sensor messages it knows are coming.
const SENSOR_READ_TIMEOUT: Duration = Duration::from_secs(10);
/// Bounded drain for device workers and servers at shutdown.
const DRAIN_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Scenario name or path; falls back to the config's scenario.
    pub scenario: Option<String>,
    pub seed: Option<u64>,
    pub mode: Option<RunMode>,
    /// Defaults to `<log_dir>/<scenario>-<seed>`.
    pub run_dir: Option<PathBuf>,
    /// Skip writing the run directory.
    pub no_persist: bool,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("startup failed in {module}: {message}")]
    Startup { module: String, message: String },
    #[error("{module} failed: {message}")]
    Runtime { module: String, message: String },
    #[error("persisting logs: {0}")]
    Persist(#[from] PersistError),
}

impl RunError {
    /// Process exit code: 1 for configuration problems, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 1,
            _ => 2,
        }
    }

    fn startup(module: &str, e: impl std::fmt::Display) -> Self {
        RunError::Startup {
            module: module.to_string(),
            message: e.to_string(),
        }
    }

    fn runtime(module: &str, e: impl std::fmt::Display) -> Self {
        RunError::Runtime {
            module: module.to_string(),
            message: e.to_string(),
        }
    }
}

impl From<BusError> for RunError {
    fn from(e: BusError) -> Self {
        RunError::runtime("broker", e)
    }
}

/// Addresses the servers actually bound (relevant when ports are 0).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Endpoints {
    pub control: SocketAddr,
    pub console: SocketAddr,
    pub alarm_manager: SocketAddr,
    pub cameras: BTreeMap<String, SocketAddr>,
}

impl Endpoints {
    pub fn control_url(&self) -> String {
        format!("http://{}", self.control)
    }

    pub fn console_url(&self) -> String {
        format!("http://{}", self.console)
    }

    pub fn alarm_manager_url(&self) -> String {
        format!("ws://{}/notifications", self.alarm_manager)
    }

    pub fn camera_url(&self, id: &str) -> Option<String> {
        self.cameras.get(id).map(|a| format!("http://{a}"))
    }
}

/// A camera the gateway pulls from, and when it is next due.
struct CameraSlot {
    ingest: CameraIngest,
    /// Index of the next frame period to fetch.
    next_frame: u64,
    retry_at: Option<f64>,
}

impl CameraSlot {
    fn due(&self, now: f64) -> bool {
        let eps = 1e-9;
        match self.retry_at {
            Some(t) => now + eps >= t,
            None => now + eps >= self.next_frame as f64 / self.ingest.fps(),
        }
    }

    fn schedule(&mut self, outcome: &FetchOutcome, now: f64) {
        match outcome {
            FetchOutcome::Failed { retry_in, .. } => {
                self.retry_at = Some(now + retry_in.as_secs_f64())
            }
            _ => {
                self.retry_at = None;
                self.next_frame = (now * self.ingest.fps() + 1e-9).floor() as u64 + 1;
            }
        }
    }
}

struct SensorLink {
    ingest: SensorIngest,
    retry_at: f64,
}

pub struct System {
    cfg: SystemConfig,
    script: ScenarioScript,
    mode: RunMode,
    run_dir: Option<PathBuf>,
    world: Arc<World>,
    state: Arc<WorldState>,
    hub: Arc<SnapshotHub>,
    clock: SimClock,
    broker: Broker,
    queue: ControlQueue,
    alarm_manager: Arc<AlarmManager>,
    cameras: BTreeMap<String, Arc<CameraDevice>>,
    slots: Vec<CameraSlot>,
    sensors: Option<SensorLink>,
    worker: RuleWorker,
    store: Arc<AlarmStore>,
    registry: Arc<Registry>,
    served: Vec<Served>,
    shutdown: watch::Sender<bool>,
    endpoints: Endpoints,
    started: Instant,
}

impl std::fmt::Debug for System {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("System")
            .field("scenario", &self.script.name)
            .field("mode", &self.mode)
            .field("tick", &self.state.tick)
            .field("endpoints", &self.endpoints)
            .finish_non_exhaustive()
    }
}

async fn bind(cfg: &SystemConfig, module: &str, port: u16) -> Result<TcpListener, RunError> {
    servers::bind(module, SocketAddr::new(cfg.host, port))
        .await
        .map_err(|e| RunError::startup(module, e.source))
}

fn stop_servers(served: Vec<Served>, shutdown: &watch::Sender<bool>) {
    let _ = shutdown.send(true);
    for s in served {
        s.task.abort();
    }
}

impl System {
    /// Starts every module. On failure everything already started is torn
    /// down and the error names the module that failed.
    pub async fn start(cfg: SystemConfig, opts: RunOptions) -> Result<Self, RunError> {
        let scenario = opts
            .scenario
            .clone()
            .or_else(|| cfg.scenario.clone())
            .ok_or_else(|| RunError::startup("world", "no scenario given"))?;
        let mut script = cfg.load_scenario(&scenario)?;
        if let Some(seed) = opts.seed.or(cfg.seed) {
            script.seed = seed;
        }
        let bank = cfg.sensor_bank()?;
        let world = Arc::new(
            World::new(cfg.plan.clone(), script.clone())
                .map_err(|e| RunError::startup("world", e))?,
        );
        let initial = world.initial_state();
        let (shutdown, shutdown_rx) = watch::channel(false);
        let mut served = Vec::new();
        match Self::start_inner(
            cfg,
            opts,
            script,
            world,
            initial,
            bank,
            shutdown.clone(),
            shutdown_rx,
            &mut served,
        )
        .await
        {
            Ok(mut system) => {
                system.served = served;
                system.shutdown = shutdown;
                Ok(system)
            }
            Err(e) => {
                stop_servers(served, &shutdown);
                Err(e)
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    async fn start_inner(
        cfg: SystemConfig,
        opts: RunOptions,
        script: ScenarioScript,
        world: Arc<World>,
        initial: WorldState,
        bank: vigil_core::vdevices::SensorBank,
        shutdown: watch::Sender<bool>,
        shutdown_rx: watch::Receiver<bool>,
        served: &mut Vec<Served>,
    ) -> Result<Self, RunError> {
        let mode = opts.mode.unwrap_or(cfg.mode);
        let run_dir = (!opts.no_persist).then(|| {
            opts.run_dir
                .clone()
                .unwrap_or_else(|| cfg.log_dir.join(format!("{}-{}", script.name, script.seed)))
        });
        let clock = SimClock::default();
        clock.set(initial.clock);
        let hub = Arc::new(SnapshotHub::new(initial.clone()));
        let queue = ControlQueue::default();
        let broker = Broker::new();
        let plan = Arc::new(cfg.plan.clone());

        // Bind everything first so a port clash fails before anything runs.
        let control_l = bind(&cfg, "control server", cfg.ports.control).await?;
        let manager_l = bind(&cfg, "alarm manager", cfg.ports.alarm_manager).await?;
        let console_l = bind(&cfg, "console API", cfg.ports.console).await?;
        let mut camera_ls = Vec::new();
        for cam in &cfg.cameras {
            camera_ls.push(bind(&cfg, &format!("camera `{}`", cam.id), cam.port).await?);
        }
        let addr = |l: &TcpListener| l.local_addr().expect("bound listener has an address");
        let endpoints = Endpoints {
            control: addr(&control_l),
            console: addr(&console_l),
            alarm_manager: addr(&manager_l),
            cameras: cfg
                .cameras
                .iter()
                .zip(&camera_ls)
                .map(|(c, l)| (c.id.clone(), addr(l)))
                .collect(),
        };

        let sensor_statuses = bank
            .specs()
            .map(|s| SensorStatus {
                sensor_id: s.id.clone(),
                kind: s.kind,
                room: s.room.clone(),
                door: s.door.clone(),
                value: None,
                changed_at: None,
                seq: 0,
            })
            .collect();
        let door_sensors: BTreeMap<String, String> = bank
            .specs()
            .filter(|s| s.kind == SensorKind::DoorAccess)
            .filter_map(|s| Some((s.id.clone(), s.door.clone()?)))
            .collect();
        let camera_statuses = cfg
            .cameras
            .iter()
            .map(|c| {
                let base = endpoints.camera_url(&c.id).unwrap_or_default();
                CameraStatus {
                    camera_id: c.id.clone(),
                    snapshot_url: format!("{base}/snapshot"),
                    stream_url: format!("{base}/stream"),
                    room: c.room.clone().or_else(|| c.visibility.first().cloned()),
                    fps: c.fps,
                    last_tick: None,
                    last_frame_time: None,
                    all_black: false,
                    lost: false,
                    failures: 0,
                }
            })
            .collect();
        let registry = Arc::new(Registry::new(camera_statuses, sensor_statuses));
        let store = Arc::new(AlarmStore::new(
            broker.clone(),
            Arc::clone(&registry),
            clock.clone(),
        ));
        let alarm_manager = Arc::new(AlarmManager::new(bank, &initial));

        served.push(servers::serve(
            "control server",
            control_l,
            servers::control::router(Arc::clone(&world), Arc::clone(&hub), queue.clone()),
            shutdown_rx.clone(),
        ));
        served.push(servers::serve(
            "alarm manager",
            manager_l,
            servers::alarm_manager::router(Arc::clone(&alarm_manager), shutdown_rx.clone()),
            shutdown_rx.clone(),
        ));
        let mut cameras = BTreeMap::new();
        for (cam, listener) in cfg.cameras.iter().zip(camera_ls) {
            let dev = Arc::new(CameraDevice::new(
                cfg.camera_view(cam),
                Arc::clone(&plan),
                Arc::clone(&hub),
                cfg.test_mode,
            ));
            let module = format!("camera `{}`", cam.id);
            served.push(servers::serve(
                &module,
                listener,
                servers::camera::router(Arc::clone(&dev), shutdown_rx.clone()),
                shutdown_rx.clone(),
            ));
            cameras.insert(cam.id.clone(), dev);
        }
        let camera_urls: BTreeMap<String, String> = cfg
            .cameras
            .iter()
            .filter_map(|c| Some((c.id.clone(), endpoints.camera_url(&c.id)?)))
            .collect();
        served.push(servers::serve(
            "console API",
            console_l,
            console::router(ConsoleState {
                store: Arc::clone(&store),
                registry: Arc::clone(&registry),
                ptz: PtzForwarder::new(camera_urls.clone()),
                control_url: endpoints.control_url(),
                clock: clock.clone(),
                client: reqwest::Client::new(),
                shutdown: shutdown_rx.clone(),
            }),
            shutdown_rx.clone(),
        ));

        let mut slots = Vec::new();
        for cam in cfg.cameras.iter().filter(|c| c.ingest) {
            let module = format!("analytics for camera `{}`", cam.id);
            let analytics = CameraAnalytics::new(cfg.analytics_config(cam))
                .map_err(|e| RunError::startup(&module, e))?;
            slots.push(CameraSlot {
                ingest: CameraIngest::new(
                    camera_urls[&cam.id].clone(),
                    cam.fps,
                    analytics,
                    broker.clone(),
                    Arc::clone(&registry),
                ),
                next_frame: 0,
                retry_at: None,
            });
        }
        let sensors = SensorIngest::new(
            endpoints.alarm_manager_url(),
            broker.clone(),
            Arc::clone(&registry),
            door_sensors,
        );

        let topics = rule_topics(cfg.cameras.iter().map(|c| c.id.as_str()));
        let worker = RuleWorker::new(
            cfg.rules.clone(),
            cfg.site_context(),
            &topics,
            broker.clone(),
            Arc::clone(&store),
        )
        .map_err(|e| RunError::startup("rule engine", e))?;

        let mut system = System {
            cfg,
            script,
            mode,
            run_dir,
            world,
            state: hub.latest(),
            hub,
            clock,
            broker,
            queue,
            alarm_manager,
            cameras,
            slots,
            sensors: Some(SensorLink {
                ingest: sensors,
                retry_at: 0.0,
            }),
            worker,
            store,
            registry,
            served: Vec::new(),
            shutdown,
            endpoints,
            started: Instant::now(),
        };
        if system.mode == RunMode::Fast {
            system.sync_sensor_link().await?;
        }
        tracing::info!(scenario = %system.script.name, seed = system.script.seed, mode = ?system.mode, "system started");
        Ok(system)
    }

    pub fn endpoints(&self) -> &Endpoints {
        &self.endpoints
    }

    pub fn broker(&self) -> &Broker {
        &self.broker
    }

    pub fn store(&self) -> &Arc<AlarmStore> {
        &self.store
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn state(&self) -> &Arc<WorldState> {
        &self.state
    }

    pub fn world(&self) -> &Arc<World> {
        &self.world
    }

    pub fn script(&self) -> &ScenarioScript {
        &self.script
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn mode(&self) -> RunMode {
        self.mode
    }

    pub fn camera(&self, id: &str) -> Option<&Arc<CameraDevice>> {
        self.cameras.get(id)
    }

    pub fn alarm_manager(&self) -> &Arc<AlarmManager> {
        &self.alarm_manager
    }

    pub fn worker(&self) -> &RuleWorker {
        &self.worker
    }

    pub fn is_finished(&self) -> bool {
        self.world.is_finished(&self.state)
    }

    /// Applies queued control actions, then advances the world one tick.
    fn advance_world(&mut self) {
        let mut s = (*self.state).clone();
        for a in self.queue.drain() {
            match self.world.apply_action(&s, &a.actor, &a.name, &a.value) {
                Ok(next) => s = next,
                Err(e) => {
                    tracing::warn!(actor = %a.actor, action = %a.name, %e, "control action dropped")
                }
            }
        }
        let next = Arc::new(self.world.step(&s));
        self.clock.set(next.clock);
        self.hub.publish(Arc::clone(&next));
        self.state = next;
    }

    /// Connects to the alarm manager if due and consumes its snapshot burst.
    async fn sync_sensor_link(&mut self) -> Result<(), RunError> {
        let now = self.clock.now();
        let expected = self.alarm_manager.sensor_count();
        let Some(link) = self.sensors.as_mut() else {
            return Ok(());
        };
        if link.ingest.is_connected() || now + 1e-9 < link.retry_at {
            return Ok(());
        }
        match link.ingest.connect(now).await {
            Ok(()) => {
                if let Err(e) = link.ingest.read_exact(expected, SENSOR_READ_TIMEOUT).await {
                    Self::sensor_failure(link, e, now)?;
                }
            }
            Err((LinkError::Bus(e), _)) => return Err(e.into()),
            Err((e, delay)) => {
                tracing::debug!(%e, ?delay, "alarm manager unreachable");
                link.retry_at = now + delay.as_secs_f64();
            }
        }
        Ok(())
    }

    fn sensor_failure(link: &mut SensorLink, e: LinkError, now: f64) -> Result<(), RunError> {
        if let LinkError::Bus(b) = e {
            return Err(b.into());
        }
        tracing::warn!(%e, "sensor link failed");
        let delay = link
            .ingest
            .link_failed(&e, now)
            .map_err(|e| RunError::runtime("sensor gateway", e))?;
        link.retry_at = now + delay.as_secs_f64();
        Ok(())
    }

    /// One lockstep tick: world, sensor notifications, due camera frames,
    /// then the rule engine over everything published this tick.
    pub async fn step(&mut self) -> Result<(), RunError> {
        self.advance_world();
        let now = self.state.clock;
        let tick = self.state.tick;
        let changes = self.alarm_manager.update(&self.state);
        if let Some(link) = self.sensors.as_mut() {
            if link.ingest.is_connected() {
                if let Err(e) = link
                    .ingest
                    .read_exact(changes.len(), SENSOR_READ_TIMEOUT)
                    .await
                {
                    Self::sensor_failure(link, e, now)?;
                }
            }
        }
        self.sync_sensor_link().await?;

        // Fetch concurrently, publish in config order so runs stay reproducible.
        let due: Vec<usize> = (0..self.slots.len())
            .filter(|&i| self.slots[i].due(now))
            .collect();
        let fetched = join_all(due.iter().map(|&i| self.slots[i].ingest.fetch(Some(tick)))).await;
        for (i, result) in due.into_iter().zip(fetched) {
            let slot = &mut self.slots[i];
            let outcome = match result {
                Ok((frame, size)) => slot.ingest.accept(frame, size),
                Err(e) => slot.ingest.fail(&e, now),
            }
            .map_err(|e| {
                RunError::runtime(
                    &format!("gateway for camera `{}`", slot.ingest.camera_id()),
                    e,
                )
            })?;
            slot.schedule(&outcome, now);
        }
        self.worker.drain(Duration::ZERO)?;
        Ok(())
    }

    /// Runs to the end of the scenario and shuts down.
    pub async fn run(self) -> Result<RunReport, RunError> {
        self.run_until(std::future::pending()).await
    }

    /// Like [`System::run`], stopping early (and still flushing logs) once
    /// `stop` resolves.
    pub async fn run_until(
        mut self,
        stop: impl Future<Output = ()> + Send,
    ) -> Result<RunReport, RunError> {
        let mut stop = std::pin::pin!(stop);
        let interrupted = match self.mode {
            RunMode::Fast => {
                let mut interrupted = false;
                while !self.is_finished() {
                    if (&mut stop).now_or_never().is_some() {
                        interrupted = true;
                        break;
                    }
                    self.step().await?;
                }
                interrupted
            }
            RunMode::Realtime => self.run_realtime(stop).await?,
        };
        self.finish(interrupted).await
    }

    async fn run_realtime(
        &mut self,
        mut stop: std::pin::Pin<&mut (impl Future<Output = ()> + Send)>,
    ) -> Result<bool, RunError> {
        let clock: Arc<dyn Clock> = Arc::new(TokioClock);
        let rx = self.shutdown.subscribe();
        let mut ingest: Vec<(String, JoinHandle<Result<(), IngestError>>)> = Vec::new();
        for slot in std::mem::take(&mut self.slots) {
            let id = slot.ingest.camera_id().to_string();
            let task = tokio::spawn(slot.ingest.run(
                self.cfg.ingest,
                Arc::clone(&clock),
                self.clock.clone(),
                rx.clone(),
            ));
            ingest.push((id, task));
        }
        let sensor_task = self.sensors.take().map(|l| {
            tokio::spawn(
                l.ingest
                    .run(Arc::clone(&clock), self.clock.clone(), rx.clone()),
            )
        });

        let (worker_stop, worker_rx) = watch::channel(false);
        let worker = std::mem::replace(
            &mut self.worker,
            RuleWorker::new(
                Default::default(),
                Default::default(),
                &[],
                Broker::new(),
                Arc::clone(&self.store),
            )
            .expect("default rule config is valid"),
        );
        let worker_task = tokio::task::spawn_blocking(move || {
            let mut worker = worker;
            let mut result = Ok(());
            while !*worker_rx.borrow() {
                if let Err(e) = worker.drain(Duration::from_millis(50)) {
                    result = Err(e);
                    break;
                }
            }
            (worker, result)
        });

        let mut interval = tokio::time::interval(Duration::from_secs_f64(self.world.dt()));
        interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        interval.tick().await;
        let mut interrupted = false;
        while !self.is_finished() {
            tokio::select! {
                _ = interval.tick() => {}
                _ = &mut stop => {
                    interrupted = true;
                    break;
                }
            }
            self.advance_world();
            self.alarm_manager.update(&self.state);
        }

        let _ = self.shutdown.send(true);
        for (id, task) in ingest {
            match tokio::time::timeout(DRAIN_TIMEOUT, task).await {
                Ok(Ok(Err(e))) => tracing::error!(camera = %id, %e, "camera gateway failed"),
                Ok(Err(e)) => tracing::error!(camera = %id, %e, "camera gateway panicked"),
                Err(_) => tracing::warn!(camera = %id, "camera gateway did not stop in time"),
                Ok(Ok(Ok(()))) => {}
            }
        }
        if let Some(task) = sensor_task {
            match tokio::time::timeout(DRAIN_TIMEOUT, task).await {
                Ok(Ok(Err(e))) => tracing::error!(%e, "sensor gateway failed"),
                Ok(Err(e)) => tracing::error!(%e, "sensor gateway panicked"),
                Err(_) => tracing::warn!("sensor gateway did not stop in time"),
                Ok(Ok(Ok(()))) => {}
            }
        }
        let _ = worker_stop.send(true);
        let (worker, result) = worker_task
            .await
            .map_err(|e| RunError::runtime("rule engine", e))?;
        self.worker = worker;
        result?;
        Ok(interrupted)
    }

    /// Drains the rule engine, closes open windows, stops servers and
    /// persists the run directory.
    async fn finish(mut self, interrupted: bool) -> Result<RunReport, RunError> {
        self.worker.drain(Duration::ZERO)?;
        let end_time = self.state.clock;
        self.worker.flush(end_time)?;
        let _ = self.shutdown.send(true);
        for s in std::mem::take(&mut self.served) {
            if tokio::time::timeout(DRAIN_TIMEOUT, s.task).await.is_err() {
                tracing::warn!(module = %s.module, "server did not stop in time");
            }
        }

        let alarms = self.store.raised_log();
        let event_counts = self
            .broker
            .topics()
            .into_iter()
            .map(|t| {
                let n = self.broker.topic_len(&t);
                (t, n)
            })
            .collect();
        let report = RunReport::summarize(
            RunHeader {
                scenario: self.script.name.clone(),
                seed: self.script.seed,
                mode: self.mode,
                ticks: self.state.tick,
                sim_seconds: end_time,
                wall_clock_seconds: self.started.elapsed().as_secs_f64(),
                interrupted,
            },
            &alarms,
            event_counts,
        );
        if let Some(dir) = &self.run_dir {
            let site = SiteRecord {
                rules: self.cfg.rules.clone(),
                site: self.cfg.site_context(),
                end_time,
            };
            persist::persist_run(
                dir,
                &RunArtifacts {
                    broker: &self.broker,
                    alarms: &alarms,
                    site: &site,
                    checkpoint: self.worker.checkpoint(),
                    report: &report,
                },
            )?;
            tracing::info!(dir = %dir.display(), "run persisted");
        }
        Ok(report)
    }

    pub fn run_dir(&self) -> Option<&PathBuf> {
        self.run_dir.as_ref()
    }

    /// Ingest mode the free-running camera workers use.
    pub fn ingest_mode(&self) -> IngestMode {
        self.cfg.ingest
    }
}
