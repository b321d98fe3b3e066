//! Hardware-agnostic robot definitions: spaces, kinematic maps, wheel links,
//! and composition.

pub mod arm;
pub mod builtins;
pub mod definition;
pub mod drive;
pub mod file;
pub mod geometry;
pub mod links;
pub mod sensor;

use thiserror::Error;

use crate::record::RecordError;

pub use arm::{ArmLink, ArmParams, Pose3D};
pub use builtins::{builtin, BUILTIN_NAMES};
pub use definition::{
    merge_definitions, read_pose, Kinematics, KinematicsKind, Part, RangeSuite, RobotDefinition,
    Space,
};
pub use drive::{DiffDriveParams, MecanumParams, WheelPair, NONHOLONOMIC_EPS};
pub use file::{load_definition, parse_definition, resolve_definition};
pub use geometry::{
    integrate_pose, integrate_pose_with, normalize_angle, Integrator, Pose2D, Twist2D,
};
pub use links::{expand_wheel_links, WheelLinkRule};
pub use sensor::{range_sensor_model, ArenaSpec, RangeMount};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DefinitionError {
    #[error("invalid definition: {0}")]
    Invalid(String),
    #[error("key collision: {}", .0.join(", "))]
    KeyCollision(Vec<String>),
    #[error("differential drive cannot move sideways (vy = {vy})")]
    NonholonomicViolation { vy: f64 },
    #[error("expected {expected} joints, got {found}")]
    DofMismatch { expected: usize, found: usize },
    #[error("pose ({x}, {y}) is outside the arena")]
    OutsideArena { x: f64, y: f64 },
    #[error("unknown definition `{name}` (valid: {})", .valid.join(", "))]
    UnknownDefinition { name: String, valid: Vec<String> },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Record(#[from] RecordError),
}
