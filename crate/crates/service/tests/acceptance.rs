//! Acceptance suite. Runs without the test harness and prints one
//! `PASS`/`FAIL` line per criterion; exits non-zero if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::future::Future;
use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures_util::FutureExt;
use nalgebra::{Point3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;
use vigil::alarms::AlarmStore;
use vigil::hub::SimClock;
use vigil::persist::{self, normalize_ids, SiteRecord, ALARMS_FILE, SITE_FILE};
use vigil::registry::Registry;
use vigil::worker::{rule_topics, RuleWorker, RULES_GROUP};
use vigil::{RunReport, System, SystemConfig};
use vigil_core::alarm::{Alarm, AlarmKind, FireSourceLabel};
use vigil_core::analytics::{detect, is_at_door, overlap_ratio, MIN_AREA};
use vigil_core::bus::{read_jsonl, Broker};
use vigil_core::events::{
    detections_topic, frames_topic, EventRecord, FrameMeta, Payload, TOPIC_ACCESS, TOPIC_ALARMS,
    TOPIC_DOOR,
};
use vigil_core::geometry::{Footprint, PixelRect, Vec3};
use vigil_core::vdevices::{effective_hfov, render_frame, CameraView, Frame, Projection, PtzState};
use vigil_core::world::{Agent, AgentClass, FloorPlan, Room, WorldState};

use common::{fast, fast_into, test_config};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

const EPS: f64 = 1e-9;

fn main() -> ExitCode {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .unwrap();
    let mut failed = 0;
    let mut check = |name: &str, fut: std::pin::Pin<Box<dyn Future<Output = Outcome> + '_>>| {
        let result = rt.block_on(AssertUnwindSafe(fut).catch_unwind());
        let line = match result {
            Ok(Ok(detail)) => format!("PASS {name}: {detail}"),
            Ok(Err(detail)) => {
                failed += 1;
                format!("FAIL {name}: {detail}")
            }
            Err(panic) => {
                failed += 1;
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                format!("FAIL {name}: panicked: {msg}")
            }
        };
        println!("{line}");
    };
    check("tailgating", Box::pin(tailgating()));
    check("authorized entry", Box::pin(authorized()));
    check("overlap ratio", Box::pin(async { overlap() }));
    check("fire", Box::pin(fire()));
    check("power cut", Box::pin(power()));
    check("projection", Box::pin(async { projection() }));
    check("detector exactness", Box::pin(async { detector() }));
    check("tracker stability", Box::pin(tracker()));
    check("broker offsets", Box::pin(async { broker_offsets() }));
    check("broker crash replay", Box::pin(crash_replay()));
    check("on-demand rendering", Box::pin(idle_camera()));
    check("crowding", Box::pin(crowding()));
    check("loitering", Box::pin(loitering()));
    println!("{failed} criteria failed");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

async fn run_fast(cfg: SystemConfig, scenario: &str, dir: &Path) -> Result<RunReport, String> {
    let sys = System::start(cfg, fast_into(scenario, dir.to_path_buf()))
        .await
        .map_err(|e| e.to_string())?;
    sys.run().await.map_err(|e| e.to_string())
}

fn payloads(records: &[Arc<EventRecord>]) -> impl Iterator<Item = (&EventRecord, &Payload)> {
    records.iter().map(|r| (r.as_ref(), &r.payload))
}

async fn tailgating() -> Outcome {
    let mut logs = Vec::new();
    let mut slowest: f64 = 0.0;
    let mut evidence_summary = String::new();
    for run in 0..10 {
        let dir = TempDir::new().unwrap();
        let t0 = Instant::now();
        let sys = System::start(
            test_config(),
            fast_into("tailgating", dir.path().to_path_buf()),
        )
        .await
        .map_err(|e| e.to_string())?;
        ensure!(sys.script().seed == 42, "seed {}", sys.script().seed);
        let broker = sys.broker().clone();
        let report = sys.run().await.map_err(|e| e.to_string())?;
        let elapsed = t0.elapsed().as_secs_f64();
        slowest = slowest.max(elapsed);
        ensure!(elapsed < 10.0, "run {run} took {elapsed:.2} s");
        ensure!(
            report.alarms_total == 1,
            "run {run}: {} alarms",
            report.alarms_total
        );
        let alarms: Vec<Alarm> =
            read_jsonl(&dir.path().join(ALARMS_FILE)).map_err(|e| e.to_string())?;
        let alarm = &alarms[0];
        ensure!(
            alarm.kind == AlarmKind::Tailgating,
            "run {run}: {:?}",
            alarm.kind
        );

        // Evidence: the grant and both door transitions, in script order.
        let grants: Vec<_> = alarm
            .evidence
            .iter()
            .filter(|e| e.topic == TOPIC_ACCESS)
            .collect();
        let crossings: Vec<_> = alarm
            .evidence
            .iter()
            .filter(|e| e.topic == TOPIC_DOOR)
            .collect();
        ensure!(
            grants.len() == 1 && crossings.len() == 2,
            "run {run}: evidence {:?}",
            alarm.evidence
        );
        let mut tracks = BTreeSet::new();
        for e in &crossings {
            let rec = broker
                .record(&e.topic, e.offset)
                .ok_or("dangling evidence")?;
            match &rec.payload {
                Payload::DoorTransition(t) => {
                    ensure!(t.door_id == "door-ward", "transition at {}", t.door_id);
                    tracks.insert(t.track_id);
                }
                other => return Err(format!("door evidence is {other:?}")),
            }
        }
        ensure!(
            tracks.len() == 2,
            "both transitions came from one track: {tracks:?}"
        );
        let grant = broker
            .record(TOPIC_ACCESS, grants[0].offset)
            .ok_or("dangling grant")?;
        ensure!(
            matches!(grant.payload, Payload::AccessGranted(_)),
            "grant evidence is {:?}",
            grant.payload
        );
        ensure!(
            grants[0].time < crossings[0].time
                && crossings[0].time < crossings[1].time
                && crossings[1].time <= alarm.time,
            "evidence out of order: {:?}, alarm at {}",
            alarm.evidence,
            alarm.time
        );
        if run == 0 {
            evidence_summary = format!(
                "grant {:.1} s, transitions {:.1} s and {:.1} s, alarm {:.1} s",
                grants[0].time, crossings[0].time, crossings[1].time, alarm.time
            );
        }
        logs.push(std::fs::read(dir.path().join(ALARMS_FILE)).unwrap());
    }
    ensure!(
        logs.windows(2).all(|w| w[0] == w[1]),
        "alarm logs differ between runs"
    );
    Ok(format!(
        "10 runs, 1 alarm each, byte-identical logs, slowest {slowest:.2} s; {evidence_summary}"
    ))
}

async fn authorized() -> Outcome {
    let dir = TempDir::new().unwrap();
    let report = run_fast(test_config(), "authorized", dir.path()).await?;
    ensure!(
        report.alarms_total == 0,
        "{} alarms: {:?}",
        report.alarms_total,
        report.alarms_by_type
    );
    let accesses = report.event_counts.get(TOPIC_ACCESS).copied().unwrap_or(0);
    let crossings = report.event_counts.get(TOPIC_DOOR).copied().unwrap_or(0);
    ensure!(
        accesses == 1 && crossings >= 1,
        "grant/transition counts {accesses}/{crossings}"
    );
    Ok(format!(
        "0 alarms ({accesses} grant, {crossings} transition)"
    ))
}

fn brute_overlap(door: &PixelRect, person: &PixelRect) -> f64 {
    let mut inside = 0i64;
    for y in door.y0..door.y1 {
        for x in door.x0..door.x1 {
            if x >= person.x0 && x < person.x1 && y >= person.y0 && y < person.y1 {
                inside += 1;
            }
        }
    }
    inside as f64 / door.area() as f64
}

fn random_rect(rng: &mut ChaCha8Rng, min_side: i64) -> PixelRect {
    let x = rng.random_range(-20..60);
    let y = rng.random_range(-20..60);
    PixelRect::new(
        x,
        y,
        x + rng.random_range(min_side..40),
        y + rng.random_range(min_side..40),
    )
}

fn overlap() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut partial = 0;
    for i in 0..10_000 {
        let door = random_rect(&mut rng, 1);
        let person = random_rect(&mut rng, 0);
        let got = overlap_ratio(&door, &person).map_err(|e| e.to_string())?;
        let want = brute_overlap(&door, &person);
        ensure!(
            got == want,
            "pair {i}: {door:?} {person:?} gave {got}, brute force {want}"
        );
        partial += usize::from(got > 0.0 && got < 1.0);
    }
    // Half of a 10x10 door covered: ratio equals the threshold exactly.
    let door = PixelRect::new(0, 0, 10, 10);
    let half = PixelRect::new(0, 0, 5, 10);
    let r = overlap_ratio(&door, &half).unwrap();
    ensure!(
        r == 0.5 && !is_at_door(r, 0.5),
        "ratio {r} at delta 0.5 counted as at door"
    );
    ensure!(
        is_at_door(
            overlap_ratio(&door, &PixelRect::new(0, 0, 6, 10)).unwrap(),
            0.5
        ),
        "0.6 not at door"
    );
    Ok(format!(
        "10000 pairs exact ({partial} partial overlaps); ratio == delta is not at door"
    ))
}

/// Fraction of pixels in the fire color band, computed here rather than
/// through the analytics code.
fn fire_pixels_score(frame: &Frame) -> f64 {
    let fire = frame
        .pixels
        .chunks_exact(3)
        .filter(|p| p[0] == 255 && (96..160).contains(&p[1]) && p[2] == 0)
        .count();
    (fire as f64 / (frame.width * frame.height) as f64 / 0.05).min(1.0)
}

struct FireRun {
    alarms: Vec<Alarm>,
    /// (time, intensity) after each tick.
    intensity: Vec<(f64, f64)>,
    /// (time, fire score) of each cam-lab frame the pipeline analysed.
    scores: Vec<(f64, f64)>,
    /// Largest difference between the pipeline's score and a pixel recount.
    score_gap: f64,
}

/// Runs the `fire` scenario, starting the fire through the control server
/// after `start_tick` ticks.
async fn fire_run(cfg: SystemConfig, start_tick: u64) -> Result<FireRun, String> {
    let mut sys = System::start(cfg, fast("fire"))
        .await
        .map_err(|e| e.to_string())?;
    let view = sys
        .config()
        .camera_view(sys.config().camera("cam-lab").unwrap());
    let plan = sys.config().plan.clone();
    let mut intensity = Vec::new();
    let mut rendered = BTreeMap::new();
    while !sys.is_finished() {
        if sys.state().tick == start_tick {
            let url = format!("{}/action", sys.endpoints().control_url());
            let resp = reqwest::Client::new()
                .get(url)
                .query(&[
                    ("id", "lab-bench"),
                    ("name", "fire"),
                    ("value", "startFire"),
                ])
                .send()
                .await
                .map_err(|e| e.to_string())?;
            ensure!(
                resp.status() == 200,
                "control server answered {}",
                resp.status()
            );
        }
        sys.step().await.map_err(|e| e.to_string())?;
        let s = sys.state();
        intensity.push((s.clock, s.fires.first().map_or(0.0, |f| f.intensity)));
        rendered.insert(s.tick, fire_pixels_score(&render_frame(&view, s, &plan)));
    }
    let mut scores = Vec::new();
    let mut score_gap: f64 = 0.0;
    for (_, p) in payloads(&sys.broker().records(&detections_topic("cam-lab"))) {
        if let Payload::DetectionSet(d) = p {
            scores.push((d.time, d.fire_score));
            score_gap = score_gap.max((d.fire_score - rendered[&d.tick]).abs());
        }
    }
    let alarms = sys.store().raised_log();
    sys.run().await.map_err(|e| e.to_string())?;
    Ok(FireRun {
        alarms,
        intensity,
        scores,
        score_gap,
    })
}

/// Time of the second of the first two consecutive frames scoring >= 0.6.
fn visual_confirmation(scores: &[(f64, f64)]) -> Option<f64> {
    scores
        .windows(2)
        .find(|w| w[0].1 >= 0.6 && w[1].1 >= 0.6)
        .map(|w| w[1].0)
}

async fn fire() -> Outcome {
    let dt = 0.1;
    let run = fire_run(test_config(), 20).await?;
    ensure!(
        run.score_gap <= 1e-12,
        "pipeline fire score differs from pixel count by {}",
        run.score_gap
    );
    let fires: Vec<&Alarm> = run
        .alarms
        .iter()
        .filter(|a| a.kind == AlarmKind::Fire)
        .collect();
    let sensor = fires
        .iter()
        .find(|a| a.source == Some(FireSourceLabel::Sensor))
        .ok_or_else(|| format!("no sensor fire alarm: {:?}", run.alarms))?;
    let crossing = run
        .intensity
        .iter()
        .find(|(_, i)| *i >= 0.15)
        .map(|(t, _)| *t)
        .ok_or("intensity never reached 0.15")?;
    let lag = sensor.time - crossing;
    ensure!(
        (-EPS..=dt + EPS).contains(&lag),
        "sensor alarm {:.3} s after the crossing at {crossing:.1} s",
        lag
    );

    let confirmed = visual_confirmation(&run.scores).ok_or("fire score never held >= 0.6")?;
    let visual: Vec<&&Alarm> = fires
        .iter()
        .filter(|a| a.source != Some(FireSourceLabel::Sensor))
        .collect();
    ensure!(visual.len() == 1, "visual-path alarms: {visual:?}");
    ensure!(
        visual[0].source == Some(FireSourceLabel::Both),
        "visual alarm during an active smoke sensor labeled {:?}",
        visual[0].source
    );
    ensure!(
        (visual[0].time - confirmed).abs() < EPS,
        "visual alarm at {} but confirmed at {confirmed}",
        visual[0].time
    );
    ensure!(
        visual[0].camera_id.as_deref() == Some("cam-lab"),
        "{:?}",
        visual[0].camera_id
    );

    // Without the lab smoke detector the camera is the only witness.
    let mut cfg = test_config();
    cfg.sensors.retain(|s| s.id != "smoke-lab");
    let alone = fire_run(cfg, 20).await?;
    let fires_alone: Vec<&Alarm> = alone
        .alarms
        .iter()
        .filter(|a| a.kind == AlarmKind::Fire)
        .collect();
    ensure!(
        fires_alone.len() == 1 && fires_alone[0].source == Some(FireSourceLabel::Visual),
        "without smoke-lab: {fires_alone:?}"
    );
    let confirmed_alone =
        visual_confirmation(&alone.scores).ok_or("no confirmation without smoke-lab")?;
    ensure!(
        (fires_alone[0].time - confirmed_alone).abs() < EPS,
        "visual-only alarm time {}",
        fires_alone[0].time
    );

    Ok(format!(
        "intensity 0.15 at {crossing:.1} s, sensor alarm {lag:.1} s later; score >= 0.6 twice by {confirmed:.1} s, \
         alarm labeled both; without smoke-lab labeled visual"
    ))
}

async fn power() -> Outcome {
    let dir = TempDir::new().unwrap();
    let sys = System::start(test_config(), fast_into("power", dir.path().to_path_buf()))
        .await
        .map_err(|e| e.to_string())?;
    let broker = sys.broker().clone();
    let cameras: Vec<(String, f64)> = sys
        .config()
        .cameras
        .iter()
        .map(|c| (c.id.clone(), c.fps))
        .collect();
    let report = sys.run().await.map_err(|e| e.to_string())?;
    let (cut, restore) = (2.0, 6.0);
    let mut detail = Vec::new();
    for (id, fps) in cameras {
        let period = 1.0 / fps;
        let frames: Vec<FrameMeta> = payloads(&broker.records(&frames_topic(&id)))
            .filter_map(|(_, p)| match p {
                Payload::FrameMeta(m) => Some(m.clone()),
                _ => None,
            })
            .collect();
        let first_black = frames
            .iter()
            .find(|f| f.all_black)
            .ok_or_else(|| format!("{id} never went black"))?;
        ensure!(
            first_black.time - cut <= period + EPS,
            "{id}: first black frame at {}",
            first_black.time
        );
        for f in &frames {
            let should_be_black = f.time + EPS >= cut + period && f.time + EPS < restore;
            let before = f.time + EPS < cut;
            let after = f.time + EPS >= restore + period;
            ensure!(
                !(should_be_black && !f.all_black),
                "{id}: frame at {} not black",
                f.time
            );
            ensure!(
                !((before || after) && f.all_black),
                "{id}: frame at {} black",
                f.time
            );
        }
        let recovered = frames
            .iter()
            .find(|f| f.time + EPS >= restore && !f.all_black)
            .ok_or_else(|| format!("{id} never recovered"))?;
        ensure!(
            recovered.time - restore <= period + EPS,
            "{id}: recovered at {}",
            recovered.time
        );
        detail.push(format!(
            "{id} black {:.1}-{:.1} s",
            first_black.time, recovered.time
        ));
    }
    let alarms: Vec<Alarm> =
        read_jsonl(&dir.path().join(ALARMS_FILE)).map_err(|e| e.to_string())?;
    let power: Vec<&Alarm> = alarms
        .iter()
        .filter(|a| a.kind == AlarmKind::Power)
        .collect();
    ensure!(
        report.alarms_of(AlarmKind::Power) == 1 && power.len() == 1,
        "{} power alarms",
        power.len()
    );
    ensure!(
        power[0].time >= cut - EPS,
        "power alarm before the cut at {}",
        power[0].time
    );
    Ok(format!(
        "{}; power alarm at {:.1} s",
        detail.join(", "),
        power[0].time
    ))
}

/// Pinhole model built from rotation matrices: body frame x forward, y
/// left, z up; yaw about world z after pitch about body y.
fn pinhole(cam: &CameraView, p: Vec3) -> Option<(f64, f64)> {
    let yaw = cam.base_yaw + cam.ptz.pan;
    let pitch = cam.base_pitch + cam.ptz.tilt;
    let body_to_world = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw)
        * Rotation3::from_axis_angle(&Vector3::y_axis(), -pitch);
    let origin = Point3::new(cam.position.x, cam.position.y, cam.position.z);
    let body = body_to_world.inverse() * (Point3::new(p.x, p.y, p.z) - origin);
    if body.x <= 0.0 {
        return None;
    }
    let half_fov = (cam.base_hfov / 2.0).tan().atan2(cam.ptz.zoom);
    let f = (cam.image_width as f64 / 2.0) / half_fov.tan();
    Some((
        cam.image_width as f64 / 2.0 - f * body.y / body.x,
        cam.image_height as f64 / 2.0 - f * body.z / body.x,
    ))
}

fn projection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let mut behind = 0;
    while cases < 1000 {
        let cam = CameraView {
            camera_id: "c".into(),
            position: Vec3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(0.5..5.0),
            ),
            base_yaw: rng.random_range(-PI..PI),
            base_pitch: rng.random_range(-0.6..0.3),
            base_hfov: rng.random_range(0.3..2.4),
            image_width: 640,
            image_height: 480,
            ptz: PtzState {
                pan: rng.random_range(-0.5..0.5),
                tilt: rng.random_range(-0.3..0.3),
                zoom: rng.random_range(1.0..6.0),
            },
            visibility: vec![],
            door_box: None,
            listen_port: 0,
        };
        let p = Vec3::new(
            cam.position.x + rng.random_range(-15.0..15.0),
            cam.position.y + rng.random_range(-15.0..15.0),
            rng.random_range(0.0..3.0),
        );
        match (cam.project_point(p), pinhole(&cam, p)) {
            (Projection::Point { u, v }, Some((eu, ev))) => {
                // Far off-image points only amplify rounding.
                if eu.abs() > 4000.0 || ev.abs() > 4000.0 {
                    continue;
                }
                worst = worst.max((u - eu).abs()).max((v - ev).abs());
            }
            (Projection::BehindCamera, None) => behind += 1,
            (got, want) => return Err(format!("case {cases}: {got:?} vs {want:?}")),
        }
        cases += 1;
    }
    ensure!(worst <= 1e-9, "max error {worst:e} px");
    for base in [0.2, 1.0, PI / 2.0, 2.8] {
        ensure!(
            effective_hfov(base, 1.0) == base,
            "zoom 1 changed hfov {base}"
        );
    }
    let h = effective_hfov(PI / 2.0, 2.0);
    let err = (h - 2.0 * 0.5f64.atan()).abs();
    ensure!(err <= 1e-12, "zoom 2 hfov off by {err:e}");
    Ok(format!("1000 cases ({behind} behind camera), max error {worst:.1e} px; zoom 2 hfov error {err:.1e} rad"))
}

fn hall_agent(i: usize, class: AgentClass, x: f64, y: f64) -> Agent {
    Agent {
        id: format!("a{i}"),
        class,
        position: Vec3::new(x, y, 0.0),
        height: 1.8,
        width: 0.5,
        speed: 0.0,
        waypoints: vec![],
        credential: None,
    }
}

fn detector() -> Outcome {
    let plan = FloorPlan {
        rooms: vec![Room {
            id: "hall".into(),
            footprint: Footprint::new(0.0, 0.0, 30.0, 12.0),
            base_temperature: 21.0,
        }],
        doors: vec![],
        zones: vec![],
    };
    let cam = CameraView {
        camera_id: "cam".into(),
        position: Vec3::new(0.2, 6.0, 2.6),
        base_yaw: 0.0,
        base_pitch: -0.2,
        base_hfov: PI / 2.0,
        image_width: 320,
        image_height: 240,
        ptz: PtzState::default(),
        visibility: vec!["hall".into()],
        door_box: None,
        listen_port: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut frames, mut boxes) = (0, 0);
    while frames < 500 {
        let n = rng.random_range(1..=4);
        let agents = (0..n)
            .map(|i| {
                let class = AgentClass::ALL[rng.random_range(0..AgentClass::ALL.len())];
                hall_agent(
                    i,
                    class,
                    rng.random_range(3.0..25.0),
                    rng.random_range(0.5..11.5),
                )
            })
            .collect();
        let state = WorldState {
            clock: 0.0,
            tick: frames,
            agents,
            doors: BTreeMap::new(),
            fires: vec![],
            power_on: true,
            room_temperatures: BTreeMap::new(),
            flooded_rooms: BTreeSet::new(),
            rng_seed: 1,
            grants_issued: 0,
        };
        let frame = render_frame(&cam, &state, &plan);
        let truth = &frame.ground_truth;
        // Touching or overlapping boxes are outside this criterion.
        let apart =
            |a: &PixelRect, b: &PixelRect| a.x1 < b.x0 || b.x1 < a.x0 || a.y1 < b.y0 || b.y1 < a.y0;
        if !truth
            .iter()
            .enumerate()
            .all(|(i, a)| truth[i + 1..].iter().all(|b| apart(&a.rect, &b.rect)))
        {
            continue;
        }
        let expected: BTreeSet<_> = truth
            .iter()
            .filter(|g| g.rect.area() >= MIN_AREA)
            .map(|g| (<[i64; 4]>::from(g.rect), g.class))
            .collect();
        let got: BTreeSet<_> = detect(&frame, MIN_AREA)
            .iter()
            .map(|d| (<[i64; 4]>::from(d.bbox), d.class))
            .collect();
        ensure!(
            got == expected,
            "frame {frames}: detected {got:?}, truth {expected:?}"
        );
        boxes += expected.len();
        frames += 1;
    }
    Ok(format!("500 frames, {boxes} boxes, sets equal"))
}

async fn tracker() -> Outcome {
    let mut sys = System::start(test_config(), fast("corridor-walk"))
        .await
        .map_err(|e| e.to_string())?;
    let walker = &sys.script().agents[0];
    ensure!(
        (walker.speed - 1.5).abs() < EPS,
        "walker speed {}",
        walker.speed
    );
    let view = sys
        .config()
        .camera_view(sys.config().camera("cam-corridor").unwrap());
    let plan = sys.config().plan.clone();
    let mut truth_visible = BTreeSet::new();
    while !sys.is_finished() {
        sys.step().await.map_err(|e| e.to_string())?;
        let frame = render_frame(&view, sys.state(), &plan);
        if frame.ground_truth.iter().any(|g| g.rect.area() >= MIN_AREA) {
            truth_visible.insert(frame.tick);
        }
    }
    let mut ids = BTreeSet::new();
    let mut tracked = BTreeSet::new();
    for (_, p) in payloads(&sys.broker().records(&detections_topic("cam-corridor"))) {
        if let Payload::DetectionSet(d) = p {
            for t in &d.tracks {
                ids.insert(t.track_id);
            }
            if !d.tracks.is_empty() {
                tracked.insert(d.tick);
            }
        }
    }
    sys.run().await.map_err(|e| e.to_string())?;
    ensure!(ids.len() == 1, "track ids {ids:?}");
    ensure!(
        tracked == truth_visible,
        "tracked on {} frames, visible on {}",
        tracked.len(),
        truth_visible.len()
    );
    let (first, last) = (
        tracked.first().copied().unwrap_or(0),
        tracked.last().copied().unwrap_or(0),
    );
    Ok(format!(
        "track {:?} on all {} visible frames (ticks {first}-{last})",
        ids,
        tracked.len()
    ))
}

fn broker_offsets() -> Outcome {
    let broker = Broker::new();
    let producers: Vec<_> = (0..4)
        .map(|p| {
            let broker = broker.clone();
            std::thread::spawn(move || {
                for i in 0..1000u64 {
                    let meta = FrameMeta {
                        camera_id: format!("p{p}"),
                        tick: i,
                        time: i as f64,
                        byte_size: 0,
                        all_black: false,
                    };
                    broker
                        .publish(
                            &frames_topic("cam-load"),
                            &format!("p{p}"),
                            i as f64,
                            Payload::FrameMeta(meta),
                        )
                        .unwrap();
                }
            })
        })
        .collect();
    for h in producers {
        h.join().map_err(|_| "producer panicked")?;
    }
    let records = broker.records(&frames_topic("cam-load"));
    ensure!(records.len() == 4000, "{} records", records.len());
    let mut next_tick = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        ensure!(r.offset == i as u64, "offset {} at position {i}", r.offset);
        if i > 0 {
            ensure!(r.seq > records[i - 1].seq, "sequence not increasing at {i}");
        }
        let Payload::FrameMeta(m) = &r.payload else {
            return Err("wrong payload".into());
        };
        let expect = next_tick.entry(r.key.clone()).or_insert(0u64);
        ensure!(m.tick == *expect, "producer {} out of order", r.key);
        *expect += 1;
    }
    Ok("4 producers x 1000 records, offsets 0..3999 gap-free, per-producer order kept".into())
}

async fn crash_replay() -> Outcome {
    let dir = TempDir::new().unwrap();
    run_fast(test_config(), "tailgating", dir.path()).await?;
    let original: Vec<Alarm> =
        read_jsonl(&dir.path().join(ALARMS_FILE)).map_err(|e| e.to_string())?;
    let site: SiteRecord =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(SITE_FILE)).unwrap())
            .map_err(|e| e.to_string())?;

    // Rebuild the input topics in publication order.
    let mut inputs: Vec<EventRecord> = persist::read_topics(dir.path())
        .map_err(|e| e.to_string())?
        .into_iter()
        .filter(|(t, _)| t != TOPIC_ALARMS)
        .flat_map(|(_, r)| r)
        .collect();
    inputs.sort_by_key(|r| r.seq);
    let broker = Broker::new();
    for r in &inputs {
        broker
            .publish(&r.topic, &r.key, r.time, r.payload.clone())
            .map_err(|e| e.to_string())?;
    }
    let total = inputs.len() as u64;
    let cfg = test_config();
    let topics = rule_topics(cfg.cameras.iter().map(|c| c.id.as_str()));
    let store = Arc::new(AlarmStore::new(
        broker.clone(),
        Arc::new(Registry::new(vec![], vec![])),
        SimClock::default(),
    ));

    let mut first = RuleWorker::new(
        site.rules.clone(),
        site.site.clone(),
        &topics,
        broker.clone(),
        Arc::clone(&store),
    )
    .map_err(|e| e.to_string())?;
    first
        .process_batch((total / 3) as usize, Duration::ZERO)
        .map_err(|e| e.to_string())?;
    first.commit().map_err(|e| e.to_string())?;
    let committed: u64 = topics
        .iter()
        .map(|t| broker.committed_offset(t, RULES_GROUP).unwrap_or(0))
        .sum();
    // Keep going without committing until the alarm is out, then crash.
    while store.all().is_empty() {
        if first
            .process_batch(1, Duration::ZERO)
            .map_err(|e| e.to_string())?
            == 0
        {
            break;
        }
    }
    let uncommitted = first.processed() - committed;
    ensure!(!store.all().is_empty(), "no alarm before the crash point");
    let checkpoint = first.checkpoint().clone();
    drop(first);

    let mut second = RuleWorker::resume(
        site.rules,
        site.site,
        checkpoint,
        &topics,
        broker.clone(),
        Arc::clone(&store),
    )
    .map_err(|e| e.to_string())?;
    second.drain(Duration::ZERO).map_err(|e| e.to_string())?;
    second.flush(site.end_time).map_err(|e| e.to_string())?;
    ensure!(
        second.processed() == total - committed,
        "resumed worker read {} of {}",
        second.processed(),
        total - committed
    );
    let delivered = committed + uncommitted + second.processed();
    ensure!(
        uncommitted > 0 && delivered > total,
        "no redelivery happened"
    );
    let replayed = store.raised_log();
    ensure!(
        normalize_ids(&replayed) == normalize_ids(&original),
        "alarm log after crash {replayed:?} differs from {original:?}"
    );
    let replay = persist::replay(dir.path()).map_err(|e| e.to_string())?;
    ensure!(replay.matches(), "persisted replay differs");
    Ok(format!(
        "{total} records, crash after {} processed with {uncommitted} uncommitted; {delivered} deliveries cover all; \
         alarm log equal ({} alarm)",
        committed + uncommitted,
        replayed.len()
    ))
}

async fn idle_camera() -> Outcome {
    let mut cfg = test_config();
    cfg.cameras
        .iter_mut()
        .filter(|c| c.id == "cam-corridor")
        .for_each(|c| c.ingest = false);
    let sys = System::start(cfg, fast("idle"))
        .await
        .map_err(|e| e.to_string())?;
    let corridor = Arc::clone(sys.camera("cam-corridor").unwrap());
    let ward = Arc::clone(sys.camera("cam-ward").unwrap());
    let report = sys.run().await.map_err(|e| e.to_string())?;
    ensure!(report.ticks == 1000, "{} ticks", report.ticks);
    ensure!(
        corridor.stream_clients() == 0,
        "corridor has stream clients"
    );
    ensure!(
        corridor.render_count() == 0,
        "corridor rendered {} frames",
        corridor.render_count()
    );
    ensure!(
        ward.render_count() >= 1000,
        "watched camera rendered only {}",
        ward.render_count()
    );
    Ok(format!(
        "1000 ticks: unwatched camera 0 renders, watched camera {}",
        ward.render_count()
    ))
}

async fn crowding() -> Outcome {
    let dir = TempDir::new().unwrap();
    let report = run_fast(test_config(), "crowding", dir.path()).await?;
    let n = report.alarms_of(AlarmKind::Crowding);
    ensure!(n == 1, "{n} crowding alarms");
    ensure!(
        report.alarms_total == 1,
        "other alarms: {:?}",
        report.alarms_by_type
    );
    let alarms: Vec<Alarm> =
        read_jsonl(&dir.path().join(ALARMS_FILE)).map_err(|e| e.to_string())?;
    ensure!(
        alarms[0].room_id.as_deref() == Some("lab"),
        "room {:?}",
        alarms[0].room_id
    );
    Ok(format!(
        "5 agents against limit 4: 1 alarm at {:.1} s",
        alarms[0].time
    ))
}

async fn loitering() -> Outcome {
    let dir = TempDir::new().unwrap();
    let sys = System::start(
        test_config(),
        fast_into("loitering", dir.path().to_path_buf()),
    )
    .await
    .map_err(|e| e.to_string())?;
    let zone = sys.config().plan.zone("drug-store").unwrap().footprint;
    ensure!(
        sys.config()
            .plan
            .zone("drug-store")
            .unwrap()
            .is_restricted(),
        "zone is not restricted"
    );
    ensure!(
        sys.config().rules.loiter_seconds == 30.0,
        "threshold {}",
        sys.config().rules.loiter_seconds
    );
    // Ground-truth dwell from the world alone.
    let world = Arc::clone(sys.world());
    let mut s = world.initial_state();
    let mut dwell = 0.0;
    while !world.is_finished(&s) {
        s = world.step(&s);
        let p = s.agent("visitor").unwrap().position;
        if zone.contains(p.x, p.y) {
            dwell += world.dt();
        }
    }
    let report = sys.run().await.map_err(|e| e.to_string())?;
    ensure!(
        (dwell - 35.0).abs() <= 0.1 + EPS,
        "visitor dwelt {dwell:.1} s"
    );
    let n = report.alarms_of(AlarmKind::Loitering);
    ensure!(
        n == 1 && report.alarms_total == 1,
        "{n} loitering alarms, {} total",
        report.alarms_total
    );
    let alarms: Vec<Alarm> =
        read_jsonl(&dir.path().join(ALARMS_FILE)).map_err(|e| e.to_string())?;
    Ok(format!(
        "{dwell:.1} s dwell against 30 s: 1 alarm at {:.1} s",
        alarms[0].time
    ))
}
