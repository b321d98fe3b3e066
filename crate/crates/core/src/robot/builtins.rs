//! Built-in fleet: the differential-drive family, a mecanum base, a 5-DoF
//! arm, and the base+arm merge.

use std::f64::consts::FRAC_PI_2;

use crate::record::{CustomFn, MappingRule};

use super::arm::{ArmLink, ArmParams};
use super::definition::{merge_definitions, Kinematics, Part, RangeSuite, RobotDefinition};
use super::drive::{DiffDriveParams, MecanumParams};
use super::geometry::Pose2D;
use super::links::WheelLinkRule;
use super::sensor::{ArenaSpec, RangeMount};
use super::DefinitionError;

pub const BUILTIN_NAMES: &[&str] = &[
    "create2",
    "woodbot",
    "epuck",
    "pioneer3dx",
    "pioneer3at",
    "moose",
    "omnibase",
    "arm5",
    "omnibase+arm5",
];

fn arena() -> ArenaSpec {
    ArenaSpec::new(-3.0, 3.0, -3.0, 3.0).expect("valid arena")
}

fn mount(name: &str, x: f64, y: f64, theta: f64) -> RangeMount {
    RangeMount {
        name: name.to_string(),
        offset: Pose2D::new(x, y, theta),
    }
}

fn diff_teleop(gain: f64) -> Vec<MappingRule> {
    let mix = CustomFn::builtin("diff_mix", gain).expect("builtin");
    vec![MappingRule::custom(&["fwd", "turn"], &["wh.l", "wh.r"], mix).expect("valid rule")]
}

fn diffdrive(
    name: &str,
    radius: f64,
    track: f64,
    sensors: Option<RangeSuite>,
    links: Vec<WheelLinkRule>,
    teleop_gain: f64,
) -> Result<RobotDefinition, DefinitionError> {
    let part = Part::new(
        "base",
        Kinematics::DiffDrive(DiffDriveParams::new(radius, track)?),
        sensors,
        links,
    )?;
    RobotDefinition::single(name, part)?.with_teleop_rules(diff_teleop(teleop_gain))
}

pub fn builtin(name: &str) -> Result<RobotDefinition, DefinitionError> {
    match name {
        "create2" => diffdrive(
            name,
            0.036,
            0.235,
            Some(RangeSuite {
                mounts: vec![mount("front", 0.17, 0.0, 0.0)],
                arena: arena(),
                max_range: 1.0,
            }),
            Vec::new(),
            8.0,
        ),
        "woodbot" => diffdrive(
            name,
            0.035,
            0.1,
            Some(RangeSuite {
                mounts: vec![
                    mount("front", 0.05, 0.0, 0.0),
                    mount("right", 0.0, -0.05, -FRAC_PI_2),
                ],
                arena: arena(),
                max_range: 2.0,
            }),
            Vec::new(),
            5.0,
        ),
        "epuck" => diffdrive(name, 0.0205, 0.053, None, Vec::new(), 6.0),
        "pioneer3dx" => diffdrive(name, 0.0975, 0.381, None, Vec::new(), 8.0),
        "pioneer3at" => diffdrive(
            name,
            0.11,
            0.4,
            None,
            vec![
                WheelLinkRule::new("wh.l", &["wh.l2"], 1.0),
                WheelLinkRule::new("wh.r", &["wh.r2"], 1.0),
            ],
            8.0,
        ),
        "moose" => diffdrive(
            name,
            0.3,
            1.0,
            None,
            vec![
                WheelLinkRule::new("wh.l", &["wh.l2", "wh.l3", "wh.l4"], 1.0),
                WheelLinkRule::new("wh.r", &["wh.r2", "wh.r3", "wh.r4"], 1.0),
            ],
            4.0,
        ),
        "omnibase" => {
            let part = Part::new(
                "base",
                Kinematics::Mecanum(MecanumParams::new(0.05, 0.228, 0.158)?),
                None,
                Vec::new(),
            )?;
            let mix = CustomFn::builtin("mecanum_mix", 6.0).expect("builtin");
            RobotDefinition::single(name, part)?.with_teleop_rules(vec![MappingRule::custom(
                &["fwd", "strafe", "turn"],
                &["wh.fl", "wh.fr", "wh.rl", "wh.rr"],
                mix,
            )?])
        }
        "arm5" => {
            let z = [0.0, 0.0, 1.0];
            let y = [0.0, 1.0, 0.0];
            let arm = ArmParams::new(vec![
                ArmLink::new(z, [0.033, 0.0, 0.147])?,
                ArmLink::new(y, [0.0, 0.0, 0.155])?,
                ArmLink::new(y, [0.0, 0.0, 0.135])?,
                ArmLink::new(y, [0.0, 0.0, 0.081])?,
                ArmLink::new(z, [0.0, 0.0, 0.137])?,
            ])?;
            RobotDefinition::single(
                name,
                Part::new("arm", Kinematics::Arm(arm), None, Vec::new())?,
            )
        }
        "omnibase+arm5" | "youbot" => merge_definitions(&builtin("omnibase")?, &builtin("arm5")?),
        other => Err(DefinitionError::UnknownDefinition {
            name: other.to_string(),
            valid: BUILTIN_NAMES.iter().map(|s| s.to_string()).collect(),
        }),
    }
}
