use std::sync::{Arc, Mutex};
use std::time::Duration;

use rems::backend::{AnalyticalBackend, Backend, BackendError};
use rems::iosys::{parse_trajectory, LogWriter, TrajectoryInput};
use rems::record::DefRecord;
use rems::robot::{builtin, RobotDefinition};
use rems::runtime::{
    JobDone, Phase, ProcessContext, ProcessSystem, RobotSpec, RunConfig, Runtime, RuntimeError,
    StepSnapshot,
};

const STRAIGHT: &str = "t,wh.l[rad/s],wh.r[rad/s]\n0,4,4\n";

fn config(duration: f64, dt: f64) -> RunConfig {
    RunConfig {
        dt,
        duration,
        ..RunConfig::default()
    }
}

fn straight_input() -> Box<TrajectoryInput> {
    Box::new(TrajectoryInput::new(
        "straight",
        parse_trajectory(STRAIGHT, "straight").unwrap(),
    ))
}

/// Analytical model that errors once `t` passes `fail_after`.
struct Faulty {
    inner: AnalyticalBackend,
    fail_after: f64,
}

impl Backend for Faulty {
    fn name(&self) -> &str {
        "faulty"
    }
    fn supports(&self, def: &RobotDefinition) -> Result<(), BackendError> {
        self.inner.supports(def)
    }
    fn init(&mut self, def: &RobotDefinition, t0: f64, seed: u64) -> Result<(), BackendError> {
        self.inner.init(def, t0, seed)
    }
    fn drive(&mut self, input: &DefRecord, t: f64) -> Result<(), BackendError> {
        if t > self.fail_after {
            return Err(BackendError::ConnectionLost("injected fault".into()));
        }
        self.inner.drive(input, t)
    }
    fn sense(&mut self) -> Result<DefRecord, BackendError> {
        self.inner.sense()
    }
    fn observe_state(&mut self) -> Result<DefRecord, BackendError> {
        self.inner.observe_state()
    }
    fn close(&mut self) -> Result<(), BackendError> {
        self.inner.close()
    }
    fn device_timestep(&self) -> Option<f64> {
        None
    }
}

/// Analytical model that takes `delay` of wall time per step.
struct Slow {
    inner: AnalyticalBackend,
    delay: Duration,
}

impl Backend for Slow {
    fn name(&self) -> &str {
        "slow"
    }
    fn supports(&self, def: &RobotDefinition) -> Result<(), BackendError> {
        self.inner.supports(def)
    }
    fn init(&mut self, def: &RobotDefinition, t0: f64, seed: u64) -> Result<(), BackendError> {
        self.inner.init(def, t0, seed)
    }
    fn drive(&mut self, input: &DefRecord, t: f64) -> Result<(), BackendError> {
        std::thread::sleep(self.delay);
        self.inner.drive(input, t)
    }
    fn sense(&mut self) -> Result<DefRecord, BackendError> {
        self.inner.sense()
    }
    fn observe_state(&mut self) -> Result<DefRecord, BackendError> {
        self.inner.observe_state()
    }
    fn close(&mut self) -> Result<(), BackendError> {
        self.inner.close()
    }
    fn device_timestep(&self) -> Option<f64> {
        None
    }
}

#[test]
fn step_count_and_final_pose() {
    let def = builtin("woodbot").unwrap();
    let mut rt = Runtime::new(config(1.0, 0.01)).unwrap();
    rt.add_robot(
        RobotSpec::new("a", def, Box::new(AnalyticalBackend::new())).with_input(straight_input()),
    )
    .unwrap();
    let report = rt.run().unwrap();
    assert_eq!(report.steps, 100);
    let a = report.robot("a").unwrap();
    assert_eq!(a.observed_t.len(), 100);
    assert!(!a.ended_stale);
    let x = a.final_state[0].1;
    assert!((x - 4.0 * 0.035).abs() < 1e-12, "{x}");
    assert!(matches!(rt.run(), Err(RuntimeError::RunAlreadyStarted)));
}

#[test]
fn add_robot_guards() {
    let mut rt = Runtime::new(config(1.0, 0.01)).unwrap();
    assert!(matches!(rt.run(), Err(RuntimeError::NoRobots)));
    let mut rt = Runtime::new(config(1.0, 0.01)).unwrap();
    let def = builtin("woodbot").unwrap();
    rt.add_robot(RobotSpec::new(
        "a",
        def.clone(),
        Box::new(AnalyticalBackend::new()),
    ))
    .unwrap();
    assert!(matches!(
        rt.add_robot(RobotSpec::new("a", def, Box::new(AnalyticalBackend::new()))),
        Err(RuntimeError::DuplicateRobot(_))
    ));
    let profile = rems::backend::DeviceProfile::builtin("woodbot-like").unwrap();
    assert!(matches!(
        rt.add_robot(RobotSpec::new(
            "arm",
            builtin("arm5").unwrap(),
            Box::new(rems::backend::EmulatedBackend::new(profile))
        )),
        Err(RuntimeError::SchemaIncompatible { .. })
    ));
    assert!(Runtime::new(RunConfig {
        realtime_factor: -1.0,
        ..RunConfig::default()
    })
    .is_err());
}

#[test]
fn phase_order_is_fixed() {
    let def = builtin("woodbot").unwrap();
    let mut rt = Runtime::new(RunConfig {
        trace: true,
        ..config(0.05, 0.01)
    })
    .unwrap();
    for id in ["a", "b"] {
        rt.add_robot(RobotSpec::new(
            id,
            def.clone(),
            Box::new(AnalyticalBackend::new()),
        ))
        .unwrap();
    }
    let report = rt.run().unwrap();
    for k in 1..=5u64 {
        let phases: Vec<Phase> = report
            .trace
            .iter()
            .filter(|e| e.k == k)
            .map(|e| e.phase)
            .collect();
        assert_eq!(phases.first(), Some(&Phase::Input));
        assert_eq!(
            &phases[phases.len() - 3..],
            [Phase::Process, Phase::Output, Phase::Callback]
        );
        for id in ["a", "b"] {
            let robot: Vec<Phase> = report
                .trace
                .iter()
                .filter(|e| e.k == k && e.robot.as_deref() == Some(id))
                .map(|e| e.phase)
                .collect();
            assert_eq!(robot, [Phase::Drive, Phase::Sense, Phase::Observe]);
        }
    }
}

/// Overrides robot `a` with a spin command from step 3 onward and records
/// what each step saw.
struct Spinner {
    seen: Arc<Mutex<Vec<(u64, f64)>>>,
}

impl ProcessSystem for Spinner {
    fn process(&mut self, step: &StepSnapshot, ctx: &mut ProcessContext<'_>) {
        let a = step.robot("a").unwrap();
        self.seen
            .lock()
            .unwrap()
            .push((step.k, a.input.get("wh.l").unwrap()));
        if step.k >= 3 {
            let spin = a.input.set_value("wh.l", -1.0, None).unwrap();
            ctx.override_input("a", &spin).unwrap();
        }
    }
}

#[test]
fn process_overrides_apply_next_step() {
    let def = builtin("woodbot").unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let mut rt = Runtime::new(config(0.06, 0.01)).unwrap();
    rt.add_robot(
        RobotSpec::new("a", def, Box::new(AnalyticalBackend::new())).with_input(straight_input()),
    )
    .unwrap();
    rt.add_process(Box::new(Spinner { seen: seen.clone() }));
    rt.run().unwrap();
    let seen = seen.lock().unwrap().clone();
    assert_eq!(
        seen,
        [
            (1, 4.0),
            (2, 4.0),
            (3, 4.0),
            (4, -1.0),
            (5, -1.0),
            (6, -1.0)
        ]
    );
}

struct Submitter {
    delays_ms: Vec<u64>,
    log: Arc<Mutex<Vec<(u64, f64, f64)>>>,
}

impl ProcessSystem for Submitter {
    fn process(&mut self, step: &StepSnapshot, ctx: &mut ProcessContext<'_>) {
        if step.k == 1 {
            for (i, d) in self.delays_ms.iter().enumerate() {
                let d = *d;
                ctx.submit_job(&format!("job{i}"), move || {
                    std::thread::sleep(Duration::from_millis(d));
                    if i == 3 {
                        return Err("no result".into());
                    }
                    Ok(serde_json::json!(i))
                });
            }
        }
    }

    fn on_job_done(&mut self, done: &JobDone, _ctx: &mut ProcessContext<'_>) {
        self.log
            .lock()
            .unwrap()
            .push((done.id, done.submitted_at, done.delivered_at));
    }
}

#[test]
fn job_callbacks_arrive_once_after_completion() {
    let def = builtin("epuck").unwrap();
    let log = Arc::new(Mutex::new(Vec::new()));
    let mut rt = Runtime::new(RunConfig {
        realtime_factor: 1.0,
        ..config(0.5, 0.01)
    })
    .unwrap();
    rt.add_robot(RobotSpec::new("a", def, Box::new(AnalyticalBackend::new())))
        .unwrap();
    rt.set_job_threads(4);
    rt.add_process(Box::new(Submitter {
        delays_ms: vec![200, 20, 120, 60],
        log: log.clone(),
    }));
    let report = rt.run().unwrap();
    let log = log.lock().unwrap().clone();
    let mut ids: Vec<u64> = log.iter().map(|e| e.0).collect();
    assert_eq!(log.len(), 4);
    assert_eq!(report.jobs.done, 3);
    assert_eq!(report.jobs.failed, 1);
    // completion order is by duration here
    assert_eq!(ids, [2, 4, 3, 1]);
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 4);
    for (_, submitted, delivered) in log {
        assert_eq!(submitted, 0.01);
        let k = (delivered / 0.01).round();
        assert!(
            (delivered - k * 0.01).abs() < 1e-12,
            "{delivered} is not a step boundary"
        );
        assert!(delivered > submitted);
    }
}

#[test]
fn failing_robot_is_held_stale_and_others_continue() {
    let def = builtin("woodbot").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut rt = Runtime::new(config(1.0, 0.01)).unwrap();
    rt.add_robot(RobotSpec::new(
        "a",
        def.clone(),
        Box::new(Faulty {
            inner: AnalyticalBackend::new(),
            fail_after: 0.5,
        }),
    ))
    .unwrap();
    rt.add_robot(
        RobotSpec::new("b", def, Box::new(AnalyticalBackend::new())).with_input(straight_input()),
    )
    .unwrap();
    rt.add_output(Box::new(LogWriter::new(dir.path())));
    let report = rt.run().unwrap();
    let a = report.robot("a").unwrap();
    assert!(a.ended_stale);
    assert!(a.failure.as_ref().unwrap().contains("injected"));
    assert_eq!(a.stale_intervals.len(), 1);
    assert!((a.stale_intervals[0][0] - 0.51).abs() < 1e-12);
    assert!(!report.robot("b").unwrap().ended_stale);
    assert!(report.any_stale());
    let rows = std::fs::read_to_string(dir.path().join("a_state.csv")).unwrap();
    assert_eq!(rows.lines().count(), 101);
    assert!(rows.lines().last().unwrap().ends_with(",1"));
}

#[test]
fn late_robot_misses_deadline_without_stalling_others() {
    let def = builtin("woodbot").unwrap();
    let mut rt = Runtime::new(RunConfig {
        realtime_factor: 1.0,
        ..config(0.3, 0.01)
    })
    .unwrap();
    rt.add_robot(RobotSpec::new(
        "slow",
        def.clone(),
        Box::new(Slow {
            inner: AnalyticalBackend::new(),
            delay: Duration::from_millis(25),
        }),
    ))
    .unwrap();
    rt.add_robot(RobotSpec::new(
        "fast",
        def,
        Box::new(AnalyticalBackend::new()),
    ))
    .unwrap();
    let report = rt.run().unwrap();
    let slow = report.robot("slow").unwrap();
    assert!(!slow.stale_intervals.is_empty());
    assert!(slow.steps_completed < report.steps);
    let fast = report.robot("fast").unwrap();
    assert_eq!(fast.steps_completed, 30);
    assert!(fast.stale_intervals.is_empty());
    assert!(report.wall_time_s < 0.3 * 1.5, "{}", report.wall_time_s);
}

#[test]
fn pacing_follows_the_wall_clock() {
    let def = builtin("epuck").unwrap();
    let mut rt = Runtime::new(RunConfig {
        realtime_factor: 2.0,
        ..config(1.0, 0.01)
    })
    .unwrap();
    rt.add_robot(RobotSpec::new("a", def, Box::new(AnalyticalBackend::new())))
        .unwrap();
    let report = rt.run().unwrap();
    assert!(
        (report.wall_time_s - 0.5).abs() < 0.5 * 0.02 + 0.005,
        "{}",
        report.wall_time_s
    );
}

#[test]
fn stop_flag_ends_the_run_early() {
    let def = builtin("epuck").unwrap();
    let mut rt = Runtime::new(RunConfig {
        realtime_factor: 1.0,
        ..config(30.0, 0.01)
    })
    .unwrap();
    rt.add_robot(RobotSpec::new("a", def, Box::new(AnalyticalBackend::new())))
        .unwrap();
    let stop = rt.stop_flag();
    std::thread::spawn(move || {
        std::thread::sleep(Duration::from_millis(200));
        stop.store(true, std::sync::atomic::Ordering::SeqCst);
    });
    let report = rt.run().unwrap();
    assert!(report.interrupted);
    assert!(report.steps < 100);
    assert_eq!(
        report.robot("a").unwrap().observed_t.len() as u64,
        report.steps
    );
}

#[test]
fn report_serializes() {
    let def = builtin("woodbot").unwrap();
    let mut rt = Runtime::new(config(0.1, 0.01)).unwrap();
    rt.add_robot(RobotSpec::new("a", def, Box::new(AnalyticalBackend::new())))
        .unwrap();
    let report = rt.run().unwrap();
    let v: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(v["steps"], 10);
    assert_eq!(v["robots"][0]["final_state"][0][0], "x");
    assert!(report.summary().contains("10 steps"));
}
