use crate::backend::tick_index;

use super::RuntimeError;

/// Shared discrete time source: `t_k = k·dt` for `k = 1..=steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clock {
    dt: f64,
    steps: u64,
    k: u64,
}

impl Clock {
    pub fn new(dt: f64, duration: f64) -> Result<Self, RuntimeError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(RuntimeError::InvalidConfig(format!(
                "dt must be > 0, got {dt}"
            )));
        }
        if !(duration.is_finite() && duration > 0.0) {
            return Err(RuntimeError::InvalidConfig(format!(
                "duration must be > 0, got {duration}"
            )));
        }
        Ok(Clock {
            dt,
            steps: step_count(duration, dt),
            k: 0,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn t(&self) -> f64 {
        time_at(self.k, self.dt)
    }

    /// Advance one tick. `None` once the final step has been issued.
    pub fn tick(&mut self) -> Option<(u64, f64)> {
        if self.k >= self.steps {
            return None;
        }
        self.k += 1;
        Some((self.k, self.t()))
    }
}

/// `round(duration/dt)`, halves rounded up.
pub fn step_count(duration: f64, dt: f64) -> u64 {
    (duration / dt + 0.5).floor().max(0.0) as u64
}

pub fn time_at(k: u64, dt: f64) -> f64 {
    k as f64 * dt
}

/// True when the device clock ticks between steps `k-1` and `k`. Never fires
/// more than once per step, even for devices faster than the loop.
pub fn device_due(k: u64, dt: f64, rate: f64) -> bool {
    if k == 0 {
        return false;
    }
    tick_index(time_at(k, dt), rate) > tick_index(time_at(k - 1, dt), rate)
}
