use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{Receiver, Sender};
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError};
use crate::record::DefRecord;
use crate::robot::RobotDefinition;

use super::trace::Phase;

/// Which side supplies sensor readings when both the definition and the
/// implementation can.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensePrecedence {
    #[default]
    Definition,
    Implementation,
}

/// A definition bound to one implementation.
pub struct ComposedRobot {
    def: RobotDefinition,
    backend: Box<dyn Backend>,
    sense: SensePrecedence,
}

#[derive(Debug, Clone)]
pub struct Observation {
    pub state: DefRecord,
    pub output: DefRecord,
    pub stale: bool,
}

impl ComposedRobot {
    pub fn new(
        def: RobotDefinition,
        backend: Box<dyn Backend>,
        sense: SensePrecedence,
    ) -> Result<Self, BackendError> {
        backend.supports(&def)?;
        Ok(ComposedRobot {
            def,
            backend,
            sense,
        })
    }

    pub fn definition(&self) -> &RobotDefinition {
        &self.def
    }

    pub fn implementation(&self) -> &str {
        self.backend.name()
    }

    pub fn init(&mut self, t0: f64, seed: u64) -> Result<(), BackendError> {
        self.backend.init(&self.def, t0, seed)
    }

    /// Drive, then sense, then observe.
    pub fn step(
        &mut self,
        input: &DefRecord,
        t: f64,
        mut trace: impl FnMut(Phase),
    ) -> Result<Observation, BackendError> {
        self.backend.drive(input, t)?;
        trace(Phase::Drive);
        let raw = self.backend.sense()?;
        trace(Phase::Sense);
        let state = self.backend.observe_state()?;
        trace(Phase::Observe);
        let stale = raw.is_stale() || state.is_stale();
        let state = state.project(self.def.state_schema())?;
        let mut output = raw.project(self.def.output_schema())?;
        if self.sense == SensePrecedence::Definition && self.def.has_sense_model() {
            let enc = output.project(&self.def.encoder_schema()?)?;
            let modeled = self.def.sense_map(&state, &enc)?;
            for (i, key) in self.def.output_schema().keys().enumerate() {
                if key.starts_with("range.") {
                    output.put_index(i, modeled.values()[i])?;
                }
            }
        }
        Ok(Observation {
            state: state.with_timestamp(t).with_stale(stale),
            output: output.with_timestamp(t).with_stale(stale),
            stale,
        })
    }

    pub fn close(&mut self) -> Result<(), BackendError> {
        self.backend.close()
    }
}

pub(crate) enum Request {
    Init { t0: f64, seed: u64 },
    Step { k: u64, t: f64, input: DefRecord },
    Close,
}

pub(crate) enum Reply {
    Init(Result<(), BackendError>),
    Step {
        k: u64,
        t: f64,
        phases: Vec<Phase>,
        result: Result<Observation, BackendError>,
    },
    Closed,
}

/// A robot running on its own thread. Only records cross the boundary.
pub(crate) struct Worker {
    tx: Sender<Request>,
    rx: Receiver<Reply>,
    handle: Option<JoinHandle<()>>,
}

impl Worker {
    pub fn spawn(id: &str, mut robot: ComposedRobot) -> Self {
        let (tx, req_rx) = crossbeam_channel::unbounded::<Request>();
        let (reply_tx, rx) = crossbeam_channel::unbounded();
        let handle = std::thread::Builder::new()
            .name(format!("robot-{id}"))
            .spawn(move || {
                for req in req_rx {
                    let reply = match req {
                        Request::Init { t0, seed } => Reply::Init(robot.init(t0, seed)),
                        Request::Step { k, t, input } => {
                            let mut phases = Vec::with_capacity(3);
                            let result = robot.step(&input, t, |p| phases.push(p));
                            Reply::Step {
                                k,
                                t,
                                phases,
                                result,
                            }
                        }
                        Request::Close => {
                            if let Err(e) = robot.close() {
                                log::warn!("closing robot: {e}");
                            }
                            let _ = reply_tx.send(Reply::Closed);
                            return;
                        }
                    };
                    if reply_tx.send(reply).is_err() {
                        return;
                    }
                }
            })
            .expect("spawn robot worker");
        Worker {
            tx,
            rx,
            handle: Some(handle),
        }
    }

    pub fn send(&self, req: Request) -> bool {
        self.tx.send(req).is_ok()
    }

    /// `None` waits forever.
    pub fn recv(&self, timeout: Option<Duration>) -> Option<Reply> {
        match timeout {
            None => self.rx.recv().ok(),
            Some(d) => self.rx.recv_timeout(d).ok(),
        }
    }

    /// Ask the worker to close and wait up to `grace` for it.
    pub fn close(mut self, grace: Duration) {
        if self.send(Request::Close) {
            let deadline = std::time::Instant::now() + grace;
            loop {
                let left = deadline.saturating_duration_since(std::time::Instant::now());
                match self.rx.recv_timeout(left) {
                    Ok(Reply::Closed) => break,
                    Ok(_) => continue,
                    Err(_) => {
                        log::warn!("robot worker did not close in time");
                        self.handle = None;
                        break;
                    }
                }
            }
        }
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{AnalyticalBackend, DeviceProfile, EmulatedBackend, ProfileOverrides};
    use crate::robot::builtin;

    fn wheels(def: &RobotDefinition, l: f64, r: f64) -> DefRecord {
        DefRecord::create(def.input_schema(), [("wh.l", l), ("wh.r", r)]).unwrap()
    }

    #[test]
    fn arm_on_wheeled_profile_is_incompatible() {
        let profile = DeviceProfile::builtin("woodbot-like").unwrap();
        let r = ComposedRobot::new(
            builtin("arm5").unwrap(),
            Box::new(EmulatedBackend::new(profile)),
            SensePrecedence::Definition,
        );
        assert!(matches!(r, Err(BackendError::SchemaIncompatible(_))));
    }

    #[test]
    fn definition_sensor_model_wins_by_default() {
        let def = builtin("woodbot").unwrap();
        let noisy = ProfileOverrides {
            noise_std: Some(50.0),
            ..Default::default()
        };
        let profile = DeviceProfile::builtin("webots-like")
            .unwrap()
            .with_overrides(&noisy)
            .unwrap();
        let mut by_def = ComposedRobot::new(
            def.clone(),
            Box::new(EmulatedBackend::new(profile.clone())),
            SensePrecedence::Definition,
        )
        .unwrap();
        let mut by_impl = ComposedRobot::new(
            def.clone(),
            Box::new(EmulatedBackend::new(profile)),
            SensePrecedence::Implementation,
        )
        .unwrap();
        let mut model = ComposedRobot::new(
            def.clone(),
            Box::new(AnalyticalBackend::new()),
            SensePrecedence::Definition,
        )
        .unwrap();
        for r in [&mut by_def, &mut by_impl, &mut model] {
            r.init(0.0, 7).unwrap();
        }
        let u = wheels(&def, 2.0, 2.0);
        let a = by_def.step(&u, 0.01, |_| {}).unwrap();
        let b = by_impl.step(&u, 0.01, |_| {}).unwrap();
        let m = model.step(&u, 0.01, |_| {}).unwrap();
        assert_eq!(a.output.get("range.front"), m.output.get("range.front"));
        assert_ne!(b.output.get("range.front"), m.output.get("range.front"));
        assert_eq!(a.output.get("enc.wh.l"), m.output.get("enc.wh.l"));
    }

    #[test]
    fn worker_round_trip() {
        let def = builtin("epuck").unwrap();
        let robot = ComposedRobot::new(
            def.clone(),
            Box::new(AnalyticalBackend::new()),
            SensePrecedence::Definition,
        )
        .unwrap();
        let w = Worker::spawn("a", robot);
        w.send(Request::Init { t0: 0.0, seed: 0 });
        assert!(matches!(w.recv(None), Some(Reply::Init(Ok(())))));
        w.send(Request::Step {
            k: 1,
            t: 0.5,
            input: wheels(&def, 1.0, 1.0),
        });
        match w.recv(None) {
            Some(Reply::Step {
                k, phases, result, ..
            }) => {
                assert_eq!(k, 1);
                assert_eq!(phases, [Phase::Drive, Phase::Sense, Phase::Observe]);
                let x = result.unwrap().state.get("x").unwrap();
                assert!((x - 0.0205 * 0.5).abs() < 1e-12);
            }
            _ => panic!("no step reply"),
        }
        w.close(Duration::from_secs(1));
    }
}
