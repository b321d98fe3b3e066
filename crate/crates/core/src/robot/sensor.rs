//! Range sensors against an axis-aligned rectangular arena.

use serde::{Deserialize, Serialize};

use super::geometry::Pose2D;
use super::DefinitionError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArenaSpec {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl ArenaSpec {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<Self, DefinitionError> {
        if !(xmin < xmax && ymin < ymax) {
            return Err(DefinitionError::Invalid(format!(
                "arena [{xmin}, {xmax}] x [{ymin}, {ymax}] is empty"
            )));
        }
        Ok(ArenaSpec {
            xmin,
            xmax,
            ymin,
            ymax,
        })
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.xmin && x <= self.xmax && y >= self.ymin && y <= self.ymax
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeMount {
    pub name: String,
    /// Sensor pose in the robot body frame.
    pub offset: Pose2D,
}

/// Distance along each mount's heading ray to the first arena wall, capped
/// at `max_range`.
pub fn range_sensor_model(
    pose: &Pose2D,
    mounts: &[RangeMount],
    arena: &ArenaSpec,
    max_range: f64,
) -> Result<Vec<f64>, DefinitionError> {
    if !arena.contains(pose.x, pose.y) {
        return Err(DefinitionError::OutsideArena {
            x: pose.x,
            y: pose.y,
        });
    }
    Ok(mounts
        .iter()
        .map(|m| {
            let s = pose.compose(&m.offset);
            ray_to_walls(s.x, s.y, s.theta, arena).clamp(0.0, max_range)
        })
        .collect())
}

fn ray_to_walls(x: f64, y: f64, heading: f64, a: &ArenaSpec) -> f64 {
    let (dy, dx) = heading.sin_cos();
    let mut best = f64::INFINITY;
    if dx > 0.0 {
        best = best.min((a.xmax - x) / dx);
    } else if dx < 0.0 {
        best = best.min((a.xmin - x) / dx);
    }
    if dy > 0.0 {
        best = best.min((a.ymax - y) / dy);
    } else if dy < 0.0 {
        best = best.min((a.ymin - y) / dy);
    }
    best
}
