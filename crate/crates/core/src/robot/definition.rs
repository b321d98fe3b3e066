//! Robot definitions: spaces plus kinematic maps, independent of any
//! implementation.
//!
//! A definition is an ordered list of [`Part`]s. Simple robots have one part;
//! merged robots (a mobile base carrying an arm) have several, and every map
//! dispatches each part's key subset to that part.

use crate::record::{DefRecord, Dimension, FieldDef, MappingRule, RecordError, Schema, UnitSpec};

use super::arm::ArmParams;
use super::drive::{DiffDriveParams, MecanumParams, WheelPair};
use super::geometry::{integrate_pose_with, normalize_angle, Integrator, Pose2D, Twist2D};
use super::links::{actuator_schema, expand_wheel_links, validate_links, WheelLinkRule};
use super::sensor::{range_sensor_model, ArenaSpec, RangeMount};
use super::DefinitionError;

#[derive(Debug, Clone, PartialEq)]
pub enum Kinematics {
    DiffDrive(DiffDriveParams),
    Mecanum(MecanumParams),
    Arm(ArmParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KinematicsKind {
    DiffDrive,
    Mecanum,
    Arm,
}

impl Kinematics {
    pub fn kind(&self) -> KinematicsKind {
        match self {
            Kinematics::DiffDrive(_) => KinematicsKind::DiffDrive,
            Kinematics::Mecanum(_) => KinematicsKind::Mecanum,
            Kinematics::Arm(_) => KinematicsKind::Arm,
        }
    }

    pub fn is_wheeled(&self) -> bool {
        !matches!(self, Kinematics::Arm(_))
    }

    fn wheel_keys(&self) -> Vec<String> {
        match self {
            Kinematics::DiffDrive(_) => vec!["wh.l".into(), "wh.r".into()],
            Kinematics::Mecanum(_) => ["wh.fl", "wh.fr", "wh.rl", "wh.rr"]
                .map(String::from)
                .to_vec(),
            Kinematics::Arm(a) => (1..=a.dof()).map(|i| format!("j{i}")).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeSuite {
    pub mounts: Vec<RangeMount>,
    pub arena: ArenaSpec,
    pub max_range: f64,
}

const POSE_KEYS: [&str; 3] = ["x", "y", "theta"];
const TWIST_KEYS: [&str; 3] = ["twist.vx", "twist.vy", "twist.wz"];
const EE_KEYS: [&str; 7] = ["ee.x", "ee.y", "ee.z", "ee.qw", "ee.qx", "ee.qy", "ee.qz"];

fn unit(name: &str) -> UnitSpec {
    UnitSpec::new(name).expect("unit table entry")
}

/// Value of `key` in the canonical unit of its dimension.
fn canon(rec: &DefRecord, key: &str) -> Result<f64, RecordError> {
    let dim = rec
        .schema()
        .spec(key)
        .ok_or_else(|| RecordError::UnknownKey(key.to_string()))?
        .dimension();
    rec.get_value(key, Some(dim.canonical_unit().name))
}

fn put_canon(rec: &mut DefRecord, key: &str, v: f64) -> Result<(), RecordError> {
    let dim = rec
        .schema()
        .spec(key)
        .ok_or_else(|| RecordError::UnknownKey(key.to_string()))?
        .dimension();
    rec.put(key, v, Some(dim.canonical_unit().name))
}

/// One kinematic unit of a definition with its four spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct Part {
    pub name: String,
    pub kinematics: Kinematics,
    pub state_schema: Schema,
    pub input_schema: Schema,
    pub output_schema: Schema,
    pub command_schema: Schema,
    pub sensors: Option<RangeSuite>,
    pub wheel_links: Vec<WheelLinkRule>,
    pub integrator: Integrator,
}

impl Part {
    pub fn new(
        name: impl Into<String>,
        kinematics: Kinematics,
        sensors: Option<RangeSuite>,
        wheel_links: Vec<WheelLinkRule>,
    ) -> Result<Self, DefinitionError> {
        let name = name.into();
        validate_links(&wheel_links)?;
        let inputs = kinematics.wheel_keys();
        let (input_unit, state_fields, command_fields): (&str, Vec<FieldDef>, Vec<FieldDef>) =
            match &kinematics {
                Kinematics::Arm(_) => {
                    let mut state: Vec<FieldDef> = inputs
                        .iter()
                        .map(|k| FieldDef::unit(k, unit("rad")))
                        .collect();
                    state.extend(EE_KEYS.iter().map(|k| {
                        FieldDef::unit(
                            *k,
                            if k.starts_with("ee.q") {
                                unit("1")
                            } else {
                                unit("m")
                            },
                        )
                    }));
                    let cmd = inputs
                        .iter()
                        .map(|k| FieldDef::unit(format!("joint.{k}"), unit("rad")))
                        .collect();
                    ("rad", state, cmd)
                }
                _ => {
                    let state = vec![
                        FieldDef::unit("x", unit("m")),
                        FieldDef::unit("y", unit("m")),
                        FieldDef::unit(
                            "theta",
                            unit("rad").with_range(-std::f64::consts::PI, std::f64::consts::PI)?,
                        ),
                    ];
                    let cmd = vec![
                        FieldDef::unit(TWIST_KEYS[0], unit("m/s")),
                        FieldDef::unit(TWIST_KEYS[1], unit("m/s")),
                        FieldDef::unit(TWIST_KEYS[2], unit("rad/s")),
                    ];
                    ("rad/s", state, cmd)
                }
            };
        let input_schema = Schema::new(
            format!("{name}.input"),
            inputs
                .iter()
                .map(|k| FieldDef::unit(k, unit(input_unit)))
                .collect(),
        )?;
        let mut outputs = Vec::new();
        if let Some(s) = &sensors {
            if !kinematics.is_wheeled() {
                return Err(DefinitionError::Invalid(
                    "range sensors need a mobile base".into(),
                ));
            }
            if !(s.max_range > 0.0) {
                return Err(DefinitionError::Invalid("max_range must be > 0".into()));
            }
            for m in &s.mounts {
                outputs.push(FieldDef::unit(
                    format!("range.{}", m.name),
                    unit("m").with_range(0.0, s.max_range)?,
                ));
            }
        }
        outputs.extend(
            inputs
                .iter()
                .map(|k| FieldDef::unit(format!("enc.{k}"), unit("rad"))),
        );
        let part = Part {
            state_schema: Schema::new(format!("{name}.state"), state_fields)?,
            output_schema: Schema::new(format!("{name}.output"), outputs)?,
            command_schema: Schema::new(format!("{name}.command"), command_fields)?,
            input_schema,
            name,
            kinematics,
            sensors,
            wheel_links,
            integrator: Integrator::Exact,
        };
        actuator_schema(&part.input_schema, &part.wheel_links)?;
        Ok(part)
    }

    /// Replace unit specs of existing keys in one space. Dimensions must match.
    pub fn override_specs(
        &mut self,
        space: Space,
        specs: &[(String, UnitSpec)],
    ) -> Result<(), DefinitionError> {
        let schema = match space {
            Space::State => &mut self.state_schema,
            Space::Input => &mut self.input_schema,
            Space::Output => &mut self.output_schema,
        };
        for (k, s) in specs {
            let cur = schema
                .spec(k)
                .ok_or_else(|| RecordError::UnknownKey(format!("{}.{k}", space.as_str())))?;
            if cur.dimension() != s.dimension() {
                return Err(RecordError::DimensionMismatch {
                    key: k.clone(),
                    expected: cur.dimension(),
                    found: s.dimension(),
                }
                .into());
            }
        }
        *schema = schema.map_specs(schema.name().to_string(), |leaf| {
            Ok(specs
                .iter()
                .find(|(k, _)| *k == leaf.path)
                .map(|(_, s)| s.clone())
                .unwrap_or_else(|| leaf.spec.clone()))
        })?;
        Ok(())
    }

    pub fn wheel_radius(&self) -> Option<f64> {
        match &self.kinematics {
            Kinematics::DiffDrive(p) => Some(p.wheel_radius),
            Kinematics::Mecanum(p) => Some(p.wheel_radius),
            Kinematics::Arm(_) => None,
        }
    }

    fn initial_state(&self) -> Result<DefRecord, DefinitionError> {
        let mut s = DefRecord::new(&self.state_schema);
        if let Kinematics::Arm(arm) = &self.kinematics {
            let joints = vec![0.0; arm.dof()];
            write_ee(&mut s, arm, &joints)?;
        }
        Ok(s)
    }

    pub fn drive_map(&self, input: &DefRecord) -> Result<DefRecord, DefinitionError> {
        let keys = self.kinematics.wheel_keys();
        let w = keys
            .iter()
            .map(|k| canon(input, k))
            .collect::<Result<Vec<_>, _>>()?;
        let mut cmd = DefRecord::new(&self.command_schema);
        match &self.kinematics {
            Kinematics::Arm(_) => {
                for (k, v) in keys.iter().zip(w) {
                    put_canon(&mut cmd, &format!("joint.{k}"), v)?;
                }
            }
            Kinematics::DiffDrive(p) => write_twist(
                &mut cmd,
                &p.fk(WheelPair {
                    left: w[0],
                    right: w[1],
                }),
            )?,
            Kinematics::Mecanum(p) => write_twist(&mut cmd, &p.fk([w[0], w[1], w[2], w[3]]))?,
        }
        Ok(cmd)
    }

    fn advance(
        &self,
        state: &DefRecord,
        command: &DefRecord,
        dt: f64,
    ) -> Result<DefRecord, DefinitionError> {
        let mut next = state.clone();
        match &self.kinematics {
            Kinematics::Arm(arm) => {
                let joints = self
                    .kinematics
                    .wheel_keys()
                    .iter()
                    .map(|k| canon(command, &format!("joint.{k}")))
                    .collect::<Result<Vec<_>, _>>()?;
                for (k, v) in self.kinematics.wheel_keys().iter().zip(&joints) {
                    put_canon(&mut next, k, *v)?;
                }
                write_ee(&mut next, arm, &joints)?;
            }
            _ => {
                let pose = read_pose(state)?;
                let twist = Twist2D::new(
                    canon(command, TWIST_KEYS[0])?,
                    canon(command, TWIST_KEYS[1])?,
                    canon(command, TWIST_KEYS[2])?,
                );
                write_pose(
                    &mut next,
                    &integrate_pose_with(&pose, &twist, dt, self.integrator),
                )?;
            }
        }
        Ok(next)
    }

    fn sense(&self, state: &DefRecord, encoders: &DefRecord) -> Result<DefRecord, DefinitionError> {
        let mut out = DefRecord::new(&self.output_schema);
        if let Some(s) = &self.sensors {
            let pose = read_pose(state)?;
            let ranges = range_sensor_model(&pose, &s.mounts, &s.arena, s.max_range)?;
            for (m, d) in s.mounts.iter().zip(ranges) {
                put_canon(&mut out, &format!("range.{}", m.name), d)?;
            }
        }
        encoders.copy_shared_into(&mut out, |_| true)?;
        Ok(out)
    }
}

fn write_twist(cmd: &mut DefRecord, t: &Twist2D) -> Result<(), RecordError> {
    put_canon(cmd, TWIST_KEYS[0], t.vx)?;
    put_canon(cmd, TWIST_KEYS[1], t.vy)?;
    put_canon(cmd, TWIST_KEYS[2], t.wz)
}

pub fn read_pose(state: &DefRecord) -> Result<Pose2D, RecordError> {
    Ok(Pose2D::new(
        canon(state, "x")?,
        canon(state, "y")?,
        canon(state, "theta")?,
    ))
}

fn write_pose(state: &mut DefRecord, p: &Pose2D) -> Result<(), RecordError> {
    put_canon(state, POSE_KEYS[0], p.x)?;
    put_canon(state, POSE_KEYS[1], p.y)?;
    put_canon(state, POSE_KEYS[2], normalize_angle(p.theta))
}

fn write_ee(state: &mut DefRecord, arm: &ArmParams, joints: &[f64]) -> Result<(), DefinitionError> {
    let pose = arm.fk(joints)?;
    let q = pose.orientation.quaternion();
    let vals = [
        pose.position.x,
        pose.position.y,
        pose.position.z,
        q.w,
        q.i,
        q.j,
        q.k,
    ];
    for (k, v) in EE_KEYS.iter().zip(vals) {
        put_canon(state, k, v)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Input,
    State,
    Output,
}

impl Space {
    pub fn as_str(self) -> &'static str {
        match self {
            Space::Input => "input",
            Space::State => "state",
            Space::Output => "output",
        }
    }

    pub const ALL: [Space; 3] = [Space::Input, Space::State, Space::Output];
}

/// A hardware-agnostic robot definition.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotDefinition {
    name: String,
    parts: Vec<Part>,
    state_schema: Schema,
    input_schema: Schema,
    output_schema: Schema,
    command_schema: Schema,
    actuator_schema: Schema,
    /// Teleop-to-input rules; sources are teleop keys.
    pub teleop_rules: Vec<MappingRule>,
}

fn concat_all(
    name: &str,
    space: &str,
    schemas: impl Iterator<Item = Schema>,
) -> Result<Schema, RecordError> {
    let mut leaves = Vec::new();
    for s in schemas {
        leaves.extend(s.leaves().iter().cloned());
    }
    Schema::from_leaves(format!("{name}.{space}"), leaves)
}

impl RobotDefinition {
    pub fn new(
        name: impl Into<String>,
        parts: Vec<Part>,
        teleop_rules: Vec<MappingRule>,
    ) -> Result<Self, DefinitionError> {
        let name = name.into();
        let collisions = collisions(&parts);
        if !collisions.is_empty() {
            return Err(DefinitionError::KeyCollision(collisions));
        }
        let def = RobotDefinition {
            state_schema: concat_all(&name, "state", parts.iter().map(|p| p.state_schema.clone()))?,
            input_schema: concat_all(&name, "input", parts.iter().map(|p| p.input_schema.clone()))?,
            output_schema: concat_all(
                &name,
                "output",
                parts.iter().map(|p| p.output_schema.clone()),
            )?,
            command_schema: concat_all(
                &name,
                "command",
                parts.iter().map(|p| p.command_schema.clone()),
            )?,
            actuator_schema: concat_all(
                &name,
                "actuators",
                parts
                    .iter()
                    .map(|p| actuator_schema(&p.input_schema, &p.wheel_links))
                    .collect::<Result<Vec<_>, _>>()?
                    .into_iter(),
            )?,
            name,
            parts,
            teleop_rules,
        };
        let teleop = crate::iosys::teleop::teleop_schema();
        for r in &def.teleop_rules {
            r.check_against(&teleop, &def.input_schema)?;
        }
        Ok(def)
    }

    pub fn single(name: impl Into<String>, part: Part) -> Result<Self, DefinitionError> {
        RobotDefinition::new(name, vec![part], Vec::new())
    }

    /// Identity element for [`merge_definitions`].
    pub fn empty(name: impl Into<String>) -> Self {
        RobotDefinition::new(name, Vec::new(), Vec::new()).expect("empty definition is valid")
    }

    pub fn with_teleop_rules(mut self, rules: Vec<MappingRule>) -> Result<Self, DefinitionError> {
        let teleop = crate::iosys::teleop::teleop_schema();
        for r in &rules {
            r.check_against(&teleop, &self.input_schema)?;
        }
        self.teleop_rules = rules;
        Ok(self)
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Result<Self, DefinitionError> {
        let name = name.into();
        RobotDefinition::new(name, std::mem::take(&mut self.parts), self.teleop_rules)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn parts(&self) -> &[Part] {
        &self.parts
    }

    pub fn state_schema(&self) -> &Schema {
        &self.state_schema
    }

    pub fn input_schema(&self) -> &Schema {
        &self.input_schema
    }

    pub fn output_schema(&self) -> &Schema {
        &self.output_schema
    }

    pub fn command_schema(&self) -> &Schema {
        &self.command_schema
    }

    /// Input keys plus wheel-link slaves.
    pub fn actuator_schema(&self) -> &Schema {
        &self.actuator_schema
    }

    pub fn schema(&self, space: Space) -> &Schema {
        match space {
            Space::Input => &self.input_schema,
            Space::State => &self.state_schema,
            Space::Output => &self.output_schema,
        }
    }

    pub fn kinds(&self) -> Vec<KinematicsKind> {
        self.parts.iter().map(|p| p.kinematics.kind()).collect()
    }

    /// True when some part carries its own sensor model.
    pub fn has_sense_model(&self) -> bool {
        self.parts.iter().any(|p| p.sensors.is_some())
    }

    pub fn is_wheeled(&self) -> bool {
        !self.parts.is_empty() && self.parts.iter().all(|p| p.kinematics.is_wheeled())
    }

    /// Wheel radius of the part that owns actuator `key`.
    pub fn wheel_radius_for(&self, key: &str) -> Option<f64> {
        self.parts.iter().find_map(|p| {
            let owns = p.input_schema.contains(key)
                || p.wheel_links
                    .iter()
                    .any(|l| l.slaves.iter().any(|(s, _)| s == key));
            if owns {
                p.wheel_radius()
            } else {
                None
            }
        })
    }

    /// Digest over all spaces, exchanged during the bridge handshake.
    pub fn schema_digest(&self) -> String {
        let all = [&self.input_schema, &self.state_schema, &self.output_schema]
            .iter()
            .map(|s| s.digest())
            .collect::<Vec<_>>()
            .join(":");
        use sha2::Digest;
        hex::encode(sha2::Sha256::digest(all.as_bytes()))
    }

    pub fn initial_state(&self) -> Result<DefRecord, DefinitionError> {
        let mut s = DefRecord::new(&self.state_schema);
        for p in &self.parts {
            p.initial_state()?.copy_shared_into(&mut s, |_| true)?;
        }
        Ok(s)
    }

    /// Input record to kinematic command (body twist or joint targets).
    pub fn drive_map(&self, input: &DefRecord) -> Result<DefRecord, DefinitionError> {
        let mut cmd = DefRecord::new(&self.command_schema);
        for p in &self.parts {
            p.drive_map(&input.project(&p.input_schema)?)?
                .copy_shared_into(&mut cmd, |_| true)?;
        }
        Ok(cmd)
    }

    /// Advance `state` by holding `input` for `dt` seconds.
    pub fn advance(
        &self,
        state: &DefRecord,
        input: &DefRecord,
        dt: f64,
    ) -> Result<DefRecord, DefinitionError> {
        let mut next = state.clone();
        for p in &self.parts {
            let cmd = p.drive_map(&input.project(&p.input_schema)?)?;
            p.advance(&state.project(&p.state_schema)?, &cmd, dt)?
                .copy_shared_into(&mut next, |_| true)?;
        }
        Ok(next)
    }

    /// Encoder readings: velocity inputs integrate, position inputs are copied.
    pub fn encoder_schema(&self) -> Result<Schema, DefinitionError> {
        let leaves = self
            .input_schema
            .leaves()
            .iter()
            .map(|l| crate::record::Leaf {
                path: format!("enc.{}", l.path),
                spec: unit("rad"),
            })
            .collect();
        Ok(Schema::from_leaves(
            format!("{}.encoders", self.name),
            leaves,
        )?)
    }

    pub fn advance_encoders(
        &self,
        enc: &DefRecord,
        input: &DefRecord,
        dt: f64,
    ) -> Result<DefRecord, DefinitionError> {
        let mut next = enc.clone();
        for (key, _, spec) in input.iter() {
            let v = canon(input, key)?;
            let ek = format!("enc.{key}");
            let cur = canon(enc, &ek)?;
            let nv = match spec.dimension() {
                Dimension::AngularVelocity => cur + v * dt,
                _ => v,
            };
            put_canon(&mut next, &ek, nv)?;
        }
        Ok(next)
    }

    /// Sensor outputs from the state (ranges) plus encoder readings.
    pub fn sense_map(
        &self,
        state: &DefRecord,
        encoders: &DefRecord,
    ) -> Result<DefRecord, DefinitionError> {
        let mut out = DefRecord::new(&self.output_schema);
        for p in &self.parts {
            p.sense(&state.project(&p.state_schema)?, encoders)?
                .copy_shared_into(&mut out, |_| true)?;
        }
        Ok(out)
    }

    /// Masters plus slave actuators.
    pub fn expand_links(&self, input: &DefRecord) -> Result<DefRecord, DefinitionError> {
        let mut out = DefRecord::new(&self.actuator_schema);
        for p in &self.parts {
            expand_wheel_links(&input.project(&p.input_schema)?, &p.wheel_links)?
                .copy_shared_into(&mut out, |_| true)?;
        }
        Ok(out)
    }
}

fn collisions(parts: &[Part]) -> Vec<String> {
    let mut out = Vec::new();
    let spaces: [(&str, fn(&Part) -> &Schema); 4] = [
        ("input", |p| &p.input_schema),
        ("state", |p| &p.state_schema),
        ("output", |p| &p.output_schema),
        ("command", |p| &p.command_schema),
    ];
    for (space, get) in spaces {
        let mut seen = std::collections::HashSet::new();
        for p in parts {
            for k in get(p).keys() {
                if !seen.insert(k.to_string()) {
                    out.push(format!("{space}.{k}"));
                }
            }
        }
    }
    let mut slaves = std::collections::HashSet::new();
    for p in parts {
        for l in &p.wheel_links {
            for (s, _) in &l.slaves {
                if !slaves.insert(s.clone()) || parts.iter().any(|q| q.input_schema.contains(s)) {
                    out.push(format!("actuator.{s}"));
                }
            }
        }
    }
    out.dedup();
    out
}

/// Combine two definitions: `a`'s keys first, then `b`'s. Fails listing every
/// colliding qualified key.
pub fn merge_definitions(
    a: &RobotDefinition,
    b: &RobotDefinition,
) -> Result<RobotDefinition, DefinitionError> {
    let name = match (a.parts.is_empty(), b.parts.is_empty()) {
        (_, true) => a.name.clone(),
        (true, false) => b.name.clone(),
        _ => format!("{}+{}", a.name, b.name),
    };
    let mut parts = a.parts.clone();
    parts.extend(b.parts.iter().cloned());
    let mut rules = a.teleop_rules.clone();
    rules.extend(b.teleop_rules.iter().cloned());
    RobotDefinition::new(name, parts, rules)
}
