//! The run orchestrator: one shared clock, a worker thread per robot, process
//! and output systems, and background jobs.

pub mod clock;
pub mod jobs;
pub mod report;
pub mod robot;
pub mod trace;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{Backend, BackendError};
use crate::iosys::{IoError, TeleopFrame};
use crate::record::{bind, DefRecord, RecordError};
use crate::robot::{DefinitionError, RobotDefinition};

pub use clock::{device_due, step_count, time_at, Clock};
pub use jobs::{JobDone, JobHandle, JobResult, JobState, JobSummary};
pub use report::{RobotReport, RunReport};
pub use robot::{ComposedRobot, Observation, SensePrecedence};
pub use trace::{Phase, PhaseTracer, TraceEvent};

use jobs::JobPool;
use robot::{Reply, Request, Worker};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("a run needs at least one robot")]
    NoRobots,
    #[error("robot id `{0}` is already in use")]
    DuplicateRobot(String),
    #[error("unknown robot `{0}`")]
    UnknownRobot(String),
    #[error("robot `{robot}`: {source}")]
    SchemaIncompatible { robot: String, source: BackendError },
    #[error("robots cannot be added once the run has started")]
    RunAlreadyStarted,
    #[error("robot `{robot}` failed to initialize: {source}")]
    InitFailure { robot: String, source: BackendError },
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Definition(#[from] DefinitionError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dt: f64,
    pub duration: f64,
    /// 0 runs as fast as possible, 1 follows the wall clock, k runs k× faster.
    pub realtime_factor: f64,
    pub seed: u64,
    /// Print a progress line on stderr once per simulated second.
    pub progress: bool,
    /// Keep the phase trace in the report.
    pub trace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dt: 0.01,
            duration: 10.0,
            realtime_factor: 0.0,
            seed: 0,
            progress: false,
            trace: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RuntimeError> {
        Clock::new(self.dt, self.duration)?;
        if !(self.realtime_factor.is_finite() && self.realtime_factor >= 0.0) {
            return Err(RuntimeError::InvalidConfig(format!(
                "realtime_factor must be >= 0, got {}",
                self.realtime_factor
            )));
        }
        Ok(())
    }

    /// How long the orchestrator waits for a robot each step.
    pub fn step_deadline(&self) -> Option<Duration> {
        (self.realtime_factor > 0.0)
            .then(|| Duration::from_secs_f64(self.dt * self.realtime_factor.max(1.0)))
    }
}

/// Per-robot seed derived from the run seed and the robot id, so adding a
/// robot never perturbs another robot's random stream.
pub fn robot_seed(seed: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// What an input system produced for one step.
#[derive(Debug, Clone)]
pub enum InputFrame {
    Empty,
    Record(DefRecord),
    Teleop(TeleopFrame),
}

impl InputFrame {
    /// The input this frame means for one robot, in the robot's input schema.
    pub fn resolve(
        &self,
        id: &str,
        def: &RobotDefinition,
    ) -> Result<Option<DefRecord>, RecordError> {
        match self {
            InputFrame::Empty => Ok(None),
            InputFrame::Record(r) => Ok(Some(r.project(def.input_schema())?)),
            InputFrame::Teleop(f) => match f.for_robot(id) {
                None => Ok(None),
                Some(cmd) => Ok(Some(bind(
                    &DefRecord::new(def.input_schema()),
                    cmd,
                    &def.teleop_rules,
                )?)),
            },
        }
    }
}

pub trait InputSystem: Send {
    fn name(&self) -> String;
    fn sample(&mut self, t: f64) -> Result<InputFrame, IoError>;
}

pub trait OutputSystem: Send {
    fn name(&self) -> String;
    fn start(&mut self, _robots: &[RobotHandle]) -> Result<(), IoError> {
        Ok(())
    }
    fn consume(&mut self, step: &StepSnapshot) -> Result<(), IoError>;
    /// Flush and list written files as (robot id, path).
    fn finalize(&mut self) -> Result<Vec<(String, PathBuf)>, IoError> {
        Ok(Vec::new())
    }
}

pub trait ProcessSystem: Send {
    fn setup(&mut self, _robots: &[RobotHandle], _ctx: &mut ProcessContext<'_>) {}
    /// Called once per step after every robot has stepped.
    fn process(&mut self, step: &StepSnapshot, ctx: &mut ProcessContext<'_>);
    fn on_job_done(&mut self, _done: &JobDone, _ctx: &mut ProcessContext<'_>) {}
}

/// What a process system may do during setup, process, or a callback.
pub struct ProcessContext<'a> {
    t: f64,
    owner: usize,
    pool: &'a mut JobPool,
    robots: &'a [RobotHandle],
    overrides: &'a mut BTreeMap<usize, DefRecord>,
    defs: &'a [RobotDefinition],
}

impl ProcessContext<'_> {
    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn robots(&self) -> &[RobotHandle] {
        self.robots
    }

    /// Run `work` off the main loop. The result comes back through
    /// `on_job_done` at a later step boundary.
    pub fn submit_job<F>(&mut self, name: &str, work: F) -> JobHandle
    where
        F: FnOnce() -> JobResult + Send + 'static,
    {
        self.pool.submit(self.owner, name, self.t, Box::new(work))
    }

    /// Replace a robot's input on the next step.
    pub fn override_input(&mut self, robot: &str, input: &DefRecord) -> Result<(), RuntimeError> {
        let i = self
            .robots
            .iter()
            .position(|h| h.id == robot)
            .ok_or_else(|| RuntimeError::UnknownRobot(robot.to_string()))?;
        let rec = input.project(self.defs[i].input_schema())?;
        self.overrides.insert(i, rec);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotHandle {
    pub id: String,
    pub definition: String,
    pub implementation: String,
}

#[derive(Debug, Clone)]
pub struct RobotSnapshot {
    pub id: String,
    pub input: DefRecord,
    pub state: DefRecord,
    pub output: DefRecord,
    pub stale: bool,
}

#[derive(Debug, Clone)]
pub struct StepSnapshot {
    pub k: u64,
    pub t: f64,
    pub robots: Vec<RobotSnapshot>,
}

impl StepSnapshot {
    pub fn robot(&self, id: &str) -> Option<&RobotSnapshot> {
        self.robots.iter().find(|r| r.id == id)
    }
}

pub struct RobotSpec {
    pub id: String,
    pub definition: RobotDefinition,
    pub backend: Box<dyn Backend>,
    /// Overrides the system-wide input for this robot.
    pub input: Option<Box<dyn InputSystem>>,
    pub sense: SensePrecedence,
}

impl RobotSpec {
    pub fn new(
        id: impl Into<String>,
        definition: RobotDefinition,
        backend: Box<dyn Backend>,
    ) -> Self {
        RobotSpec {
            id: id.into(),
            definition,
            backend,
            input: None,
            sense: SensePrecedence::Definition,
        }
    }

    pub fn with_input(mut self, input: Box<dyn InputSystem>) -> Self {
        self.input = Some(input);
        self
    }

    pub fn with_sense(mut self, sense: SensePrecedence) -> Self {
        self.sense = sense;
        self
    }
}

struct Slot {
    handle: RobotHandle,
    def: RobotDefinition,
    robot: Option<ComposedRobot>,
    input: Option<Box<dyn InputSystem>>,
}

/// Run-time bookkeeping for one robot.
struct Live {
    worker: Option<Worker>,
    active: bool,
    busy: bool,
    snapshot: RobotSnapshot,
    stale_since: Option<f64>,
    intervals: Vec<[f64; 2]>,
    failure: Option<String>,
    steps_completed: u64,
    observed_t: Vec<f64>,
}

impl Live {
    fn set_stale(&mut self, stale: bool, t: f64) {
        self.snapshot.stale = stale;
        match (stale, self.stale_since) {
            (true, None) => self.stale_since = Some(t),
            (false, Some(s)) => {
                self.intervals.push([s, t]);
                self.stale_since = None;
            }
            _ => {}
        }
    }

    fn apply(&mut self, id: &str, t: f64, result: Result<Observation, BackendError>) {
        match result {
            Ok(obs) => {
                self.snapshot.state = obs.state;
                self.snapshot.output = obs.output;
                self.steps_completed += 1;
                self.set_stale(obs.stale, t);
            }
            Err(e) => {
                log::warn!("robot `{id}` failed at t={t}: {e}");
                self.failure = Some(e.to_string());
                self.active = false;
                self.set_stale(true, t);
            }
        }
    }
}

struct OutputWorker {
    tx: Option<crossbeam_channel::Sender<Arc<StepSnapshot>>>,
    handle: Option<JoinHandle<(Vec<(String, PathBuf)>, Vec<String>)>>,
}

impl OutputWorker {
    fn spawn(mut systems: Vec<Box<dyn OutputSystem>>, robots: Vec<RobotHandle>) -> Self {
        let (tx, rx) = crossbeam_channel::bounded::<Arc<StepSnapshot>>(1024);
        let handle = std::thread::Builder::new()
            .name("output".into())
            .spawn(move || {
                let mut errors = Vec::new();
                let mut alive: Vec<bool> = systems
                    .iter_mut()
                    .map(|s| match s.start(&robots) {
                        Ok(()) => true,
                        Err(e) => {
                            errors.push(format!("{}: {e}", s.name()));
                            false
                        }
                    })
                    .collect();
                for step in rx {
                    for (s, ok) in systems.iter_mut().zip(alive.iter_mut()) {
                        if *ok {
                            if let Err(e) = s.consume(&step) {
                                log::error!("output `{}` stopped: {e}", s.name());
                                errors.push(format!("{}: {e}", s.name()));
                                *ok = false;
                            }
                        }
                    }
                }
                let mut files = Vec::new();
                for (s, ok) in systems.iter_mut().zip(alive) {
                    match s.finalize() {
                        Ok(f) => files.extend(f),
                        Err(e) if ok => errors.push(format!("{}: {e}", s.name())),
                        Err(_) => {}
                    }
                }
                (files, errors)
            })
            .expect("spawn output worker");
        OutputWorker {
            tx: Some(tx),
            handle: Some(handle),
        }
    }

    fn push(&self, step: Arc<StepSnapshot>) {
        if let Some(tx) = &self.tx {
            let _ = tx.send(step);
        }
    }

    fn finish(mut self) -> (Vec<(String, PathBuf)>, Vec<String>) {
        self.tx = None;
        self.handle
            .take()
            .and_then(|h| h.join().ok())
            .unwrap_or_else(|| (Vec::new(), vec!["output worker panicked".into()]))
    }
}

pub struct Runtime {
    config: RunConfig,
    slots: Vec<Slot>,
    system_input: Option<Box<dyn InputSystem>>,
    processes: Vec<Box<dyn ProcessSystem>>,
    outputs: Vec<Box<dyn OutputSystem>>,
    started: bool,
    stop: Arc<AtomicBool>,
    job_threads: usize,
}

impl Runtime {
    pub fn new(config: RunConfig) -> Result<Self, RuntimeError> {
        config.validate()?;
        Ok(Runtime {
            config,
            slots: Vec::new(),
            system_input: None,
            processes: Vec::new(),
            outputs: Vec::new(),
            started: false,
            stop: Arc::new(AtomicBool::new(false)),
            job_threads: std::thread::available_parallelism().map_or(2, |n| n.get().clamp(2, 8)),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn add_robot(&mut self, spec: RobotSpec) -> Result<RobotHandle, RuntimeError> {
        if self.started {
            return Err(RuntimeError::RunAlreadyStarted);
        }
        if self.slots.iter().any(|s| s.handle.id == spec.id) {
            return Err(RuntimeError::DuplicateRobot(spec.id));
        }
        let robot = ComposedRobot::new(spec.definition.clone(), spec.backend, spec.sense).map_err(
            |source| RuntimeError::SchemaIncompatible {
                robot: spec.id.clone(),
                source,
            },
        )?;
        let handle = RobotHandle {
            id: spec.id,
            definition: spec.definition.name().to_string(),
            implementation: robot.implementation().to_string(),
        };
        self.slots.push(Slot {
            handle: handle.clone(),
            def: spec.definition,
            robot: Some(robot),
            input: spec.input,
        });
        Ok(handle)
    }

    /// Input shared by every robot without its own.
    pub fn set_system_input(&mut self, input: Box<dyn InputSystem>) {
        self.system_input = Some(input);
    }

    pub fn add_process(&mut self, p: Box<dyn ProcessSystem>) {
        self.processes.push(p);
    }

    pub fn add_output(&mut self, o: Box<dyn OutputSystem>) {
        self.outputs.push(o);
    }

    pub fn set_job_threads(&mut self, n: usize) {
        self.job_threads = n.max(1);
    }

    /// Setting the flag ends the run after the current step; outputs are
    /// still finalized.
    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    pub fn set_stop_flag(&mut self, flag: Arc<AtomicBool>) {
        self.stop = flag;
    }

    pub fn handles(&self) -> Vec<RobotHandle> {
        self.slots.iter().map(|s| s.handle.clone()).collect()
    }

    pub fn run(&mut self) -> Result<RunReport, RuntimeError> {
        if self.started {
            return Err(RuntimeError::RunAlreadyStarted);
        }
        if self.slots.is_empty() {
            return Err(RuntimeError::NoRobots);
        }
        self.started = true;
        let cfg = self.config.clone();
        let mut clock = Clock::new(cfg.dt, cfg.duration)?;
        let wall_start = Instant::now();
        let handles = self.handles();
        let defs: Vec<RobotDefinition> = self.slots.iter().map(|s| s.def.clone()).collect();
        let mut tracer = PhaseTracer::new(cfg.trace);

        let mut live = Vec::with_capacity(self.slots.len());
        for slot in &mut self.slots {
            let worker = Worker::spawn(
                &slot.handle.id,
                slot.robot.take().expect("robot present before run"),
            );
            worker.send(Request::Init {
                t0: 0.0,
                seed: robot_seed(cfg.seed, &slot.handle.id),
            });
            live.push(Live {
                worker: Some(worker),
                active: true,
                busy: false,
                snapshot: RobotSnapshot {
                    id: slot.handle.id.clone(),
                    input: DefRecord::new(slot.def.input_schema()),
                    state: slot.def.initial_state()?.with_timestamp(0.0),
                    output: DefRecord::new(slot.def.output_schema()).with_timestamp(0.0),
                    stale: false,
                },
                stale_since: None,
                intervals: Vec::new(),
                failure: None,
                steps_completed: 0,
                observed_t: Vec::new(),
            });
        }
        let mut init_error = None;
        for (i, l) in live.iter_mut().enumerate() {
            let id = &handles[i].id;
            let reply = l.worker.as_ref().and_then(|w| w.recv(None));
            match reply {
                Some(Reply::Init(Ok(()))) => {}
                Some(Reply::Init(Err(e))) if e.is_connectivity() => {
                    log::warn!("robot `{id}` is unreachable, holding it stale: {e}");
                    l.failure = Some(e.to_string());
                    l.active = false;
                    l.set_stale(true, 0.0);
                }
                Some(Reply::Init(Err(e))) => {
                    init_error.get_or_insert(RuntimeError::InitFailure {
                        robot: id.clone(),
                        source: e,
                    });
                }
                _ => {
                    init_error.get_or_insert(RuntimeError::InitFailure {
                        robot: id.clone(),
                        source: BackendError::ConnectionLost("robot worker ended".into()),
                    });
                }
            }
        }
        if let Some(e) = init_error {
            for l in &mut live {
                if let Some(w) = l.worker.take() {
                    w.close(Duration::from_secs(2));
                }
            }
            return Err(e);
        }

        let outputs = OutputWorker::spawn(std::mem::take(&mut self.outputs), handles.clone());
        let mut pool = JobPool::new(self.job_threads);
        let mut overrides: BTreeMap<usize, DefRecord> = BTreeMap::new();
        for (owner, p) in self.processes.iter_mut().enumerate() {
            let mut ctx = ProcessContext {
                t: 0.0,
                owner,
                pool: &mut pool,
                robots: &handles,
                overrides: &mut overrides,
                defs: &defs,
            };
            p.setup(&handles, &mut ctx);
        }

        let deadline = cfg.step_deadline();
        let mut step_times = Vec::with_capacity(clock.steps() as usize);
        let mut interrupted = false;
        let mut last_t = 0.0_f64;
        while let Some((k, t)) = clock.tick() {
            if self.stop.load(Ordering::SeqCst) {
                interrupted = true;
                break;
            }
            let step_start = Instant::now();

            // (1) inputs
            let system_frame = match &mut self.system_input {
                Some(s) => sample_or_empty(s.as_mut(), t),
                None => InputFrame::Empty,
            };
            let pending = std::mem::take(&mut overrides);
            for (i, slot) in self.slots.iter_mut().enumerate() {
                let input = if let Some(r) = pending.get(&i) {
                    Some(r.clone())
                } else {
                    let frame = match &mut slot.input {
                        Some(s) => sample_or_empty(s.as_mut(), t),
                        None => system_frame.clone(),
                    };
                    match frame.resolve(&slot.handle.id, &slot.def) {
                        Ok(r) => r,
                        Err(e) => {
                            log::warn!("robot `{}`: unusable input at t={t}: {e}", slot.handle.id);
                            None
                        }
                    }
                };
                let input = input.unwrap_or_else(|| DefRecord::new(slot.def.input_schema()));
                live[i].snapshot.input = input.with_timestamp(t);
            }
            tracer.record(k, t, Phase::Input, None);

            // (2) robots
            for l in live.iter_mut() {
                if l.active && !l.busy {
                    let sent = l.worker.as_ref().is_some_and(|w| {
                        w.send(Request::Step {
                            k,
                            t,
                            input: l.snapshot.input.clone(),
                        })
                    });
                    l.busy = sent;
                }
            }
            let step_deadline = deadline.map(|d| Instant::now() + d);
            for (i, l) in live.iter_mut().enumerate() {
                let id = handles[i].id.as_str();
                if !l.active {
                    continue;
                }
                let mut current = false;
                while l.busy {
                    let wait = step_deadline.map(|d| d.saturating_duration_since(Instant::now()));
                    let Some(reply) = l.worker.as_ref().and_then(|w| w.recv(wait)) else {
                        break;
                    };
                    if let Reply::Step {
                        k: rk,
                        t: rt,
                        phases,
                        result,
                    } = reply
                    {
                        l.busy = false;
                        l.observed_t.push(rt);
                        for p in phases {
                            tracer.record(rk, rt, p, Some(id));
                        }
                        l.apply(id, rt, result);
                        current = rk == k;
                    }
                }
                if l.active && !current {
                    log::warn!("robot `{id}` missed the step deadline at t={t}");
                    l.set_stale(true, t);
                }
            }

            // (3) snapshots
            let snap = Arc::new(StepSnapshot {
                k,
                t,
                robots: live.iter().map(|l| l.snapshot.clone()).collect(),
            });

            // (4) process systems
            for (owner, p) in self.processes.iter_mut().enumerate() {
                let mut ctx = ProcessContext {
                    t,
                    owner,
                    pool: &mut pool,
                    robots: &handles,
                    overrides: &mut overrides,
                    defs: &defs,
                };
                p.process(&snap, &mut ctx);
            }
            tracer.record(k, t, Phase::Process, None);

            // (5) outputs
            outputs.push(snap);
            tracer.record(k, t, Phase::Output, None);

            // (6) callbacks
            let done = pool.completed();
            deliver(
                &mut self.processes,
                done,
                t,
                &mut pool,
                &handles,
                &mut overrides,
                &defs,
            );
            tracer.record(k, t, Phase::Callback, None);

            step_times.push(step_start.elapsed().as_secs_f64());
            if cfg.progress && (t + 1e-9).floor() > (last_t + 1e-9).floor() {
                let stale = live.iter().filter(|l| l.snapshot.stale).count();
                eprintln!(
                    "t = {:.0} s / {} s, {} robot(s), {} stale",
                    t.floor(),
                    cfg.duration,
                    live.len(),
                    stale
                );
            }
            last_t = t;
            if cfg.realtime_factor > 0.0 {
                let target = wall_start + Duration::from_secs_f64(t / cfg.realtime_factor);
                let now = Instant::now();
                if target > now {
                    std::thread::sleep(target - now);
                }
            }
        }

        let done = pool.wait_all();
        deliver(
            &mut self.processes,
            done,
            last_t,
            &mut pool,
            &handles,
            &mut overrides,
            &defs,
        );
        pool.shutdown();
        for l in &mut live {
            if let Some(w) = l.worker.take() {
                w.close(Duration::from_secs(2));
            }
        }
        let (files, output_errors) = outputs.finish();

        let mut log_files: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
        for (id, path) in files {
            log_files.entry(id).or_default().push(path);
        }
        let robots = live
            .into_iter()
            .zip(&handles)
            .map(|(mut l, h)| {
                let ended_stale = l.stale_since.is_some();
                if let Some(s) = l.stale_since.take() {
                    l.intervals.push([s, last_t]);
                }
                RobotReport {
                    id: h.id.clone(),
                    definition: h.definition.clone(),
                    implementation: h.implementation.clone(),
                    steps_completed: l.steps_completed,
                    stale_intervals: l.intervals,
                    ended_stale,
                    failure: l.failure,
                    final_state: l.snapshot.state.flatten(),
                    observed_t: l.observed_t,
                }
            })
            .collect();
        let wall = wall_start.elapsed().as_secs_f64();
        Ok(RunReport {
            steps: clock.k() - u64::from(interrupted),
            dt: cfg.dt,
            duration: cfg.duration,
            realtime_factor: cfg.realtime_factor,
            seed: cfg.seed,
            wall_time_s: wall,
            interrupted,
            step_time_p50_s: report::percentile(&step_times, 0.5),
            step_time_p99_s: report::percentile(&step_times, 0.99),
            robots,
            log_files,
            jobs: pool.summary,
            output_errors,
            trace: tracer.into_events(),
        })
    }
}

fn sample_or_empty(s: &mut dyn InputSystem, t: f64) -> InputFrame {
    s.sample(t).unwrap_or_else(|e| {
        log::warn!("input `{}` failed at t={t}: {e}", s.name());
        InputFrame::Empty
    })
}

fn deliver(
    processes: &mut [Box<dyn ProcessSystem>],
    done: Vec<jobs::Finished>,
    t: f64,
    pool: &mut JobPool,
    robots: &[RobotHandle],
    overrides: &mut BTreeMap<usize, DefRecord>,
    defs: &[RobotDefinition],
) {
    for f in done {
        let Some(p) = processes.get_mut(f.owner) else {
            continue;
        };
        let msg = JobDone {
            id: f.id,
            name: f.name,
            submitted_at: f.submitted_at,
            delivered_at: t,
            completion_seq: f.completion_seq,
            result: f.result,
        };
        let mut ctx = ProcessContext {
            t,
            owner: f.owner,
            pool,
            robots,
            overrides,
            defs,
        };
        p.on_job_done(&msg, &mut ctx);
    }
}

/// Robot ids must be unique; used by config validation.
pub fn duplicate_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut dups = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            dups.insert(id.to_string());
        }
    }
    dups.into_iter().collect()
}
