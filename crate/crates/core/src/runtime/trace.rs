use std::fmt;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Input,
    Drive,
    Sense,
    Observe,
    Process,
    Output,
    Callback,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Input => "input",
            Phase::Drive => "drive",
            Phase::Sense => "sense",
            Phase::Observe => "observe",
            Phase::Process => "process",
            Phase::Output => "output",
            Phase::Callback => "callback",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEvent {
    pub k: u64,
    pub t: f64,
    pub phase: Phase,
    pub robot: Option<String>,
}

/// Records the phase sequence of every step when enabled.
#[derive(Debug, Default)]
pub struct PhaseTracer {
    enabled: bool,
    events: Vec<TraceEvent>,
}

impl PhaseTracer {
    pub fn new(enabled: bool) -> Self {
        PhaseTracer {
            enabled,
            events: Vec::new(),
        }
    }

    pub fn record(&mut self, k: u64, t: f64, phase: Phase, robot: Option<&str>) {
        if self.enabled {
            self.events.push(TraceEvent {
                k,
                t,
                phase,
                robot: robot.map(str::to_string),
            });
        }
    }

    pub fn into_events(self) -> Vec<TraceEvent> {
        self.events
    }
}
