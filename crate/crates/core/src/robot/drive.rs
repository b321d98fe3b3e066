//! Wheel Jacobians for differential-drive and mecanum bases.

use serde::{Deserialize, Serialize};

use super::geometry::Twist2D;
use super::DefinitionError;

/// Lateral speeds above this are rejected by the differential-drive inverse.
pub const NONHOLONOMIC_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffDriveParams {
    pub wheel_radius: f64,
    /// Center-to-center wheel separation.
    pub track_width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WheelPair {
    pub left: f64,
    pub right: f64,
}

fn positive(name: &str, v: f64) -> Result<(), DefinitionError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(DefinitionError::Invalid(format!(
            "{name} must be > 0, got {v}"
        )))
    }
}

impl DiffDriveParams {
    pub fn new(wheel_radius: f64, track_width: f64) -> Result<Self, DefinitionError> {
        positive("wheel_radius", wheel_radius)?;
        positive("track_width", track_width)?;
        Ok(DiffDriveParams {
            wheel_radius,
            track_width,
        })
    }

    pub fn fk(&self, w: WheelPair) -> Twist2D {
        let r = self.wheel_radius;
        Twist2D {
            vx: r * (w.left + w.right) / 2.0,
            vy: 0.0,
            wz: r * (w.right - w.left) / self.track_width,
        }
    }

    pub fn ik(&self, t: &Twist2D) -> Result<WheelPair, DefinitionError> {
        if t.vy.abs() > NONHOLONOMIC_EPS {
            return Err(DefinitionError::NonholonomicViolation { vy: t.vy });
        }
        let half = t.wz * self.track_width / 2.0;
        Ok(WheelPair {
            left: (t.vx - half) / self.wheel_radius,
            right: (t.vx + half) / self.wheel_radius,
        })
    }
}

/// X-configuration mecanum base with 45° rollers. Wheel order is
/// front-left, front-right, rear-left, rear-right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MecanumParams {
    pub wheel_radius: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl MecanumParams {
    pub fn new(
        wheel_radius: f64,
        half_length: f64,
        half_width: f64,
    ) -> Result<Self, DefinitionError> {
        positive("wheel_radius", wheel_radius)?;
        positive("half_length", half_length)?;
        positive("half_width", half_width)?;
        Ok(MecanumParams {
            wheel_radius,
            half_length,
            half_width,
        })
    }

    fn k(&self) -> f64 {
        self.half_length + self.half_width
    }

    pub fn fk(&self, w: [f64; 4]) -> Twist2D {
        let r = self.wheel_radius;
        let [w1, w2, w3, w4] = w;
        Twist2D {
            vx: r * (w1 + w2 + w3 + w4) / 4.0,
            vy: r * (-w1 + w2 + w3 - w4) / 4.0,
            wz: r * (-w1 + w2 - w3 + w4) / (4.0 * self.k()),
        }
    }

    pub fn ik(&self, t: &Twist2D) -> [f64; 4] {
        let (r, k) = (self.wheel_radius, self.k());
        [
            (t.vx - t.vy - k * t.wz) / r,
            (t.vx + t.vy + k * t.wz) / r,
            (t.vx + t.vy - k * t.wz) / r,
            (t.vx - t.vy + k * t.wz) / r,
        ]
    }
}
