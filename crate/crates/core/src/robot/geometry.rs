//! Planar pose and twist. Theta is measured counter-clockwise from +x; twists
//! are expressed in the body frame.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Wrap an angle into (-π, π].
pub fn normalize_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2D {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    /// `self ⊕ local`: place a body-frame offset in the world frame.
    pub fn compose(&self, local: &Pose2D) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        Pose2D::new(
            self.x + c * local.x - s * local.y,
            self.y + s * local.x + c * local.y,
            self.theta + local.theta,
        )
    }

    pub fn distance(&self, other: &Pose2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist2D {
    pub vx: f64,
    pub vy: f64,
    pub wz: f64,
}

impl Twist2D {
    pub fn new(vx: f64, vy: f64, wz: f64) -> Self {
        Twist2D { vx, vy, wz }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Closed-form twist exponential.
    #[default]
    Exact,
    /// Forward Euler, kept for comparison exercises.
    Euler,
}

/// Below this yaw rate the straight-line branch is used.
pub const STRAIGHT_LINE_EPS: f64 = 1e-9;

/// Advance `pose` by a constant body twist held for `dt` seconds.
pub fn integrate_pose(pose: &Pose2D, t: &Twist2D, dt: f64) -> Pose2D {
    integrate_pose_with(pose, t, dt, Integrator::Exact)
}

pub fn integrate_pose_with(pose: &Pose2D, t: &Twist2D, dt: f64, integrator: Integrator) -> Pose2D {
    let (dx, dy) = match integrator {
        Integrator::Euler => (t.vx * dt, t.vy * dt),
        Integrator::Exact => {
            let dtheta = t.wz * dt;
            if t.wz.abs() < STRAIGHT_LINE_EPS {
                (t.vx * dt, t.vy * dt)
            } else {
                let s = dtheta.sin();
                // 1 - cos(a) = 2 sin²(a/2), stable for small a
                let h = (dtheta / 2.0).sin();
                let one_minus_c = 2.0 * h * h;
                (
                    (t.vx * s - t.vy * one_minus_c) / t.wz,
                    (t.vx * one_minus_c + t.vy * s) / t.wz,
                )
            }
        }
    };
    let (s, c) = pose.theta.sin_cos();
    Pose2D::new(
        pose.x + c * dx - s * dy,
        pose.y + s * dx + c * dy,
        pose.theta + t.wz * dt,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_range_is_half_open_at_minus_pi() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert!((normalize_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((normalize_angle(-7.0) - (-7.0 + 2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn straight_line() {
        let p = integrate_pose(&Pose2D::default(), &Twist2D::new(1.0, 0.0, 0.0), 10.0);
        assert_eq!(p, Pose2D::new(10.0, 0.0, 0.0));
    }

    #[test]
    fn quarter_arc() {
        // x = v/ω sin(ωt), y = v/ω (1 - cos ωt)
        let p = integrate_pose(&Pose2D::default(), &Twist2D::new(1.0, 0.0, PI / 2.0), 1.0);
        assert!((p.x - 2.0 / PI).abs() < 1e-12);
        assert!((p.y - 2.0 / PI).abs() < 1e-12);
        assert!((p.theta - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_twist_is_identity() {
        let p0 = Pose2D::new(1.0, -2.0, 0.3);
        assert_eq!(integrate_pose(&p0, &Twist2D::default(), 123.0), p0);
    }

    #[test]
    fn euler_differs_on_arcs() {
        let t = Twist2D::new(1.0, 0.0, 1.0);
        let e = integrate_pose_with(&Pose2D::default(), &t, 1.0, Integrator::Euler);
        assert_eq!((e.x, e.y), (1.0, 0.0));
    }
}
