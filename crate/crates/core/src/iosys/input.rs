use crate::runtime::{InputFrame, InputSystem};

use super::teleop::{TeleopCommand, TeleopHub};
use super::trajectory::Trajectory;
use super::IoError;

pub struct TrajectoryInput {
    name: String,
    trajectory: Trajectory,
}

impl TrajectoryInput {
    pub fn new(name: impl Into<String>, trajectory: Trajectory) -> Self {
        TrajectoryInput {
            name: name.into(),
            trajectory,
        }
    }
}

impl InputSystem for TrajectoryInput {
    fn name(&self) -> String {
        format!("trajectory:{}", self.name)
    }

    fn sample(&mut self, t: f64) -> Result<InputFrame, IoError> {
        Ok(InputFrame::Record(self.trajectory.sample(t)))
    }
}

/// Reads whatever the hub holds at each step. An optional script pushes
/// timed commands into the hub first, which makes teleop runs reproducible.
pub struct TeleopInput {
    hub: TeleopHub,
    script: Vec<(f64, TeleopCommand)>,
    next: usize,
}

impl TeleopInput {
    pub fn new(hub: TeleopHub) -> Self {
        TeleopInput {
            hub,
            script: Vec::new(),
            next: 0,
        }
    }

    /// Each command is pushed at the first step with `t >= at`.
    pub fn scripted(hub: TeleopHub, mut script: Vec<(f64, TeleopCommand)>) -> Self {
        script.sort_by(|a, b| a.0.total_cmp(&b.0));
        TeleopInput {
            hub,
            script,
            next: 0,
        }
    }

    pub fn hub(&self) -> &TeleopHub {
        &self.hub
    }
}

impl InputSystem for TeleopInput {
    fn name(&self) -> String {
        "teleop".into()
    }

    fn sample(&mut self, t: f64) -> Result<InputFrame, IoError> {
        while let Some((at, cmd)) = self.script.get(self.next) {
            if *at > t {
                break;
            }
            let mut cmd = cmd.clone();
            cmd.t_received = *at;
            self.hub.push(cmd);
            self.next += 1;
        }
        Ok(InputFrame::Teleop(self.hub.frame()?))
    }
}
