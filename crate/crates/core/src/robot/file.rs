//! TOML definition files.
//!
//! ```toml
//! name = "slowbot"
//! extends = "woodbot"          # built-in name or path to another file
//!
//! [params]
//! kind = "diffdrive"           # diffdrive | mecanum | arm
//! wheel_radius = 0.05
//! track_width = 0.2
//!
//! [input]
//! "wh.l" = { unit = "rad/s", range = [-5.0, 5.0] }
//!
//! [[rules.links]]
//! master = "wh.l"
//! slaves = ["wh.l2"]
//!
//! [[rules.teleop]]
//! sources = ["fwd", "turn"]
//! targets = ["wh.l", "wh.r"]
//! function = "diff_mix"
//! gain = 4.0
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::record::{CustomFn, Interpolation, MappingRule, RuleKind, UnitSpec};

use super::arm::{ArmLink, ArmParams};
use super::builtins::{builtin, BUILTIN_NAMES};
use super::definition::{merge_definitions, Kinematics, Part, RangeSuite, RobotDefinition, Space};
use super::drive::{DiffDriveParams, MecanumParams};
use super::geometry::{Integrator, Pose2D};
use super::links::WheelLinkRule;
use super::sensor::{ArenaSpec, RangeMount};
use super::DefinitionError;

const MAX_EXTENDS_DEPTH: usize = 16;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DefinitionFile {
    name: Option<String>,
    extends: Option<String>,
    #[serde(default)]
    merge: Vec<String>,
    params: Option<ParamsFile>,
    #[serde(default)]
    state: BTreeMap<String, SpecFile>,
    #[serde(default)]
    input: BTreeMap<String, SpecFile>,
    #[serde(default)]
    output: BTreeMap<String, SpecFile>,
    #[serde(default)]
    rules: RulesFile,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
enum KindFile {
    #[serde(alias = "diff_drive")]
    Diffdrive,
    Mecanum,
    Arm,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    kind: KindFile,
    wheel_radius: Option<f64>,
    track_width: Option<f64>,
    half_length: Option<f64>,
    half_width: Option<f64>,
    #[serde(default)]
    links: Vec<ArmLinkFile>,
    sensors: Option<SensorsFile>,
    #[serde(default)]
    integrator: Integrator,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArmLinkFile {
    axis: [f64; 3],
    offset: [f64; 3],
    /// Fixed rotation as a quaternion `[w, x, y, z]`.
    rotation: Option<[f64; 4]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SensorsFile {
    max_range: f64,
    /// `[xmin, xmax, ymin, ymax]`
    arena: [f64; 4],
    mounts: Vec<MountFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MountFile {
    name: String,
    #[serde(default)]
    x: f64,
    #[serde(default)]
    y: f64,
    #[serde(default)]
    theta: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    unit: Option<String>,
    range: Option<[f64; 2]>,
    default: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RulesFile {
    #[serde(default)]
    links: Vec<LinkFile>,
    teleop: Option<Vec<RuleFile>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkFile {
    master: String,
    slaves: Vec<String>,
    #[serde(default = "one")]
    gain: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    sources: Vec<String>,
    targets: Vec<String>,
    /// linear | broadcast | lookup | custom; inferred from `function` or `table`
    kind: Option<String>,
    #[serde(default = "one")]
    gain: f64,
    #[serde(default)]
    offset: f64,
    function: Option<String>,
    table: Option<Vec<[f64; 2]>>,
    interpolation: Option<String>,
    #[serde(default)]
    saturating: bool,
    source_unit: Option<String>,
    target_unit: Option<String>,
}

/// Load a definition file from disk.
pub fn load_definition(path: &Path) -> Result<RobotDefinition, DefinitionError> {
    load_at_depth(path, 0)
}

/// A built-in name, or a path to a definition file relative to `base_dir`.
pub fn resolve_definition(
    reference: &str,
    base_dir: &Path,
) -> Result<RobotDefinition, DefinitionError> {
    resolve_at_depth(reference, base_dir, 0)
}

/// Parse definition text. `origin` is used in error messages and as the
/// base directory for relative `extends` paths.
pub fn parse_definition(text: &str, origin: &Path) -> Result<RobotDefinition, DefinitionError> {
    parse_at_depth(text, origin, 0)
}

fn resolve_at_depth(
    reference: &str,
    base_dir: &Path,
    depth: usize,
) -> Result<RobotDefinition, DefinitionError> {
    if BUILTIN_NAMES.contains(&reference) || reference == "youbot" {
        return builtin(reference);
    }
    let path = base_dir.join(reference);
    if reference.ends_with(".toml") || path.is_file() {
        return load_at_depth(&path, depth);
    }
    builtin(reference)
}

fn load_at_depth(path: &Path, depth: usize) -> Result<RobotDefinition, DefinitionError> {
    let text = std::fs::read_to_string(path).map_err(|e| parse_err(path, e.to_string()))?;
    parse_at_depth(&text, path, depth)
}

fn parse_err(path: &Path, message: impl Into<String>) -> DefinitionError {
    DefinitionError::Parse {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn parse_at_depth(
    text: &str,
    origin: &Path,
    depth: usize,
) -> Result<RobotDefinition, DefinitionError> {
    if depth > MAX_EXTENDS_DEPTH {
        return Err(parse_err(origin, "extends chain too deep (cycle?)"));
    }
    let file: DefinitionFile =
        toml::from_str(text).map_err(|e| parse_err(origin, e.to_string()))?;
    let base_dir: PathBuf = origin.parent().map(Path::to_path_buf).unwrap_or_default();

    let base = match (&file.extends, file.merge.is_empty()) {
        (Some(_), false) => {
            return Err(parse_err(
                origin,
                "use either `extends` or `merge`, not both",
            ))
        }
        (Some(e), true) => Some(resolve_at_depth(e, &base_dir, depth + 1)?),
        (None, false) => {
            let mut acc = RobotDefinition::empty("");
            for m in &file.merge {
                acc = merge_definitions(&acc, &resolve_at_depth(m, &base_dir, depth + 1)?)?;
            }
            Some(acc)
        }
        (None, true) => None,
    };

    let links = file
        .rules
        .links
        .iter()
        .map(|l| WheelLinkRule {
            master: l.master.clone(),
            slaves: l.slaves.iter().map(|s| (s.clone(), l.gain)).collect(),
        })
        .collect::<Vec<_>>();

    let mut parts: Vec<Part> = match (&file.params, &base) {
        (Some(_), Some(b)) if b.parts().len() > 1 => {
            return Err(parse_err(
                origin,
                format!(
                    "[params] cannot replace a multi-part definition ({})",
                    b.name()
                ),
            ))
        }
        (Some(p), b) => {
            let name = b
                .as_ref()
                .and_then(|b| b.parts().first().map(|p| p.name.clone()));
            let kind_default = match p.kind {
                KindFile::Arm => "arm",
                _ => "base",
            };
            vec![build_part(
                name.as_deref().unwrap_or(kind_default),
                p,
                links.clone(),
            )?]
        }
        (None, Some(b)) => {
            let mut parts = b.parts().to_vec();
            if !links.is_empty() {
                let target = parts
                    .iter()
                    .position(|p| links.iter().all(|l| p.input_schema.contains(&l.master)))
                    .ok_or_else(|| {
                        parse_err(origin, "wheel link masters do not belong to one part")
                    })?;
                let old = &parts[target];
                let mut all = old.wheel_links.clone();
                all.extend(links.iter().cloned());
                let mut rebuilt = Part::new(
                    old.name.clone(),
                    old.kinematics.clone(),
                    old.sensors.clone(),
                    all,
                )?;
                rebuilt.state_schema = old.state_schema.clone();
                rebuilt.input_schema = old.input_schema.clone();
                rebuilt.output_schema = old.output_schema.clone();
                rebuilt.integrator = old.integrator;
                parts[target] = rebuilt;
            }
            parts
        }
        (None, None) => {
            return Err(parse_err(
                origin,
                "a definition needs [params], `extends` or `merge`",
            ))
        }
    };

    for (space, specs) in [
        (Space::State, &file.state),
        (Space::Input, &file.input),
        (Space::Output, &file.output),
    ] {
        apply_overrides(&mut parts, space, specs, origin)?;
    }

    let name = file
        .name
        .clone()
        .or_else(|| base.as_ref().map(|b| b.name().to_string()))
        .or_else(|| origin.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "robot".into());

    let teleop = match &file.rules.teleop {
        Some(rules) => rules
            .iter()
            .map(|r| build_rule(r).map_err(|m| parse_err(origin, m)))
            .collect::<Result<Vec<_>, _>>()?,
        // a replaced part may no longer have the keys the base rules target
        None => match (&base, &file.params) {
            (Some(b), None) => b.teleop_rules.clone(),
            _ => Vec::new(),
        },
    };
    RobotDefinition::new(name, parts, teleop)
}

fn need(v: Option<f64>, name: &str) -> Result<f64, DefinitionError> {
    v.ok_or_else(|| DefinitionError::Invalid(format!("[params] is missing `{name}`")))
}

fn build_part(
    name: &str,
    p: &ParamsFile,
    links: Vec<WheelLinkRule>,
) -> Result<Part, DefinitionError> {
    let kinematics = match p.kind {
        KindFile::Diffdrive => Kinematics::DiffDrive(DiffDriveParams::new(
            need(p.wheel_radius, "wheel_radius")?,
            need(p.track_width, "track_width")?,
        )?),
        KindFile::Mecanum => Kinematics::Mecanum(MecanumParams::new(
            need(p.wheel_radius, "wheel_radius")?,
            need(p.half_length, "half_length")?,
            need(p.half_width, "half_width")?,
        )?),
        KindFile::Arm => Kinematics::Arm(ArmParams::new(
            p.links
                .iter()
                .map(|l| match l.rotation {
                    Some([w, x, y, z]) => ArmLink::with_rotation(
                        l.axis,
                        l.offset,
                        nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                            w, x, y, z,
                        )),
                    ),
                    None => ArmLink::new(l.axis, l.offset),
                })
                .collect::<Result<Vec<_>, _>>()?,
        )?),
    };
    let sensors = match &p.sensors {
        Some(s) => Some(RangeSuite {
            mounts: s
                .mounts
                .iter()
                .map(|m| RangeMount {
                    name: m.name.clone(),
                    offset: Pose2D::new(m.x, m.y, m.theta),
                })
                .collect(),
            arena: ArenaSpec::new(s.arena[0], s.arena[1], s.arena[2], s.arena[3])?,
            max_range: s.max_range,
        }),
        None => None,
    };
    let mut part = Part::new(name, kinematics, sensors, links)?;
    part.integrator = p.integrator;
    Ok(part)
}

fn apply_overrides(
    parts: &mut [Part],
    space: Space,
    specs: &BTreeMap<String, SpecFile>,
    origin: &Path,
) -> Result<(), DefinitionError> {
    let mut per_part: Vec<Vec<(String, UnitSpec)>> = vec![Vec::new(); parts.len()];
    for (key, s) in specs {
        let owner = parts
            .iter()
            .position(|p| schema_of(p, space).contains(key))
            .ok_or_else(|| parse_err(origin, format!("[{}] has no key `{key}`", space.as_str())))?;
        let current = schema_of(&parts[owner], space)
            .spec(key)
            .expect("owner has key");
        let mut spec = match &s.unit {
            Some(u) => UnitSpec::new(u)?,
            None => UnitSpec::from_unit(*current.unit()),
        };
        if let Some(d) = s.default {
            if let Some([lo, hi]) = s.range {
                spec = spec.with_range(lo, hi)?;
            }
            spec = spec.with_default(d)?;
        } else if let Some([lo, hi]) = s.range {
            spec = spec.with_range(lo, hi)?;
        }
        per_part[owner].push((key.clone(), spec));
    }
    for (p, specs) in parts.iter_mut().zip(per_part) {
        if !specs.is_empty() {
            p.override_specs(space, &specs)?;
        }
    }
    Ok(())
}

fn schema_of(p: &Part, space: Space) -> &crate::record::Schema {
    match space {
        Space::State => &p.state_schema,
        Space::Input => &p.input_schema,
        Space::Output => &p.output_schema,
    }
}

fn build_rule(r: &RuleFile) -> Result<MappingRule, String> {
    let kind = r.kind.clone().unwrap_or_else(|| {
        if r.function.is_some() {
            "custom".into()
        } else if r.table.is_some() {
            "lookup".into()
        } else {
            "linear".into()
        }
    });
    let kind = match kind.as_str() {
        "linear" => RuleKind::Linear {
            gain: r.gain,
            offset: r.offset,
        },
        "broadcast" => RuleKind::Broadcast,
        "lookup" => RuleKind::Lookup {
            table: r
                .table
                .as_ref()
                .ok_or("lookup rule needs `table`")?
                .iter()
                .map(|[x, y]| (*x, *y))
                .collect(),
            interpolation: match r.interpolation.as_deref().unwrap_or("linear") {
                "linear" => Interpolation::Linear,
                "hold" => Interpolation::Hold,
                other => return Err(format!("unknown interpolation `{other}` (hold | linear)")),
            },
        },
        "custom" => {
            let name = r
                .function
                .as_deref()
                .ok_or("custom rule needs `function`")?;
            RuleKind::Custom(CustomFn::builtin(name, r.gain).ok_or_else(|| {
                format!(
                    "unknown function `{name}` (valid: {})",
                    CustomFn::builtin_names().join(", ")
                )
            })?)
        }
        other => return Err(format!("unknown rule kind `{other}`")),
    };
    let mut rule = MappingRule::new(r.sources.clone(), r.targets.clone(), kind)
        .map_err(|e| e.to_string())?
        .saturating(r.saturating);
    if let Some(u) = &r.source_unit {
        rule = rule.with_source_unit(u).map_err(|e| e.to_string())?;
    }
    if let Some(u) = &r.target_unit {
        rule = rule.with_target_unit(u).map_err(|e| e.to_string())?;
    }
    Ok(rule)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RobotDefinition, DefinitionError> {
        parse_definition(text, Path::new("test.toml"))
    }

    #[test]
    fn standalone_diffdrive() {
        let d = parse(
            r#"
            name = "tiny"
            [params]
            kind = "diffdrive"
            wheel_radius = 0.05
            track_width = 0.2
            [input]
            "wh.l" = { range = [-10.0, 10.0] }
            "#,
        )
        .unwrap();
        assert_eq!(d.name(), "tiny");
        assert_eq!(
            d.input_schema().spec("wh.l").unwrap().range(),
            Some((-10.0, 10.0))
        );
        assert_eq!(d.input_schema().spec("wh.r").unwrap().range(), None);
    }

    #[test]
    fn extends_builtin_and_adds_links() {
        let d = parse(
            r#"
            name = "skid"
            extends = "epuck"
            [[rules.links]]
            master = "wh.l"
            slaves = ["wh.l2"]
            [[rules.links]]
            master = "wh.r"
            slaves = ["wh.r2"]
            "#,
        )
        .unwrap();
        assert_eq!(d.actuator_schema().len(), 4);
        assert_eq!(d.teleop_rules.len(), 1);
    }

    #[test]
    fn merge_list() {
        let d = parse(r#"merge = ["omnibase", "arm5"]"#).unwrap();
        assert_eq!(d.input_schema().len(), 9);
        assert!(matches!(
            parse(r#"merge = ["arm5", "arm5"]"#),
            Err(DefinitionError::KeyCollision(_))
        ));
    }

    #[test]
    fn teleop_rules_parse() {
        let d = parse(
            r#"
            extends = "pioneer3dx"
            [[rules.teleop]]
            sources = ["fwd"]
            targets = ["wh.l", "wh.r"]
            gain = 10.0
            "#,
        )
        .unwrap();
        assert_eq!(
            d.teleop_rules[0].kind,
            RuleKind::Linear {
                gain: 10.0,
                offset: 0.0
            }
        );
        let bad = parse(
            r#"
            extends = "pioneer3dx"
            [[rules.teleop]]
            sources = ["jump"]
            targets = ["wh.l"]
            "#,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn errors_are_reported() {
        assert!(matches!(
            parse("[params]\nkind = \"hover\""),
            Err(DefinitionError::Parse { .. })
        ));
        assert!(parse("[params]\nkind = \"diffdrive\"\nwheel_radius = 0.1").is_err());
        assert!(parse("extends = \"woodbot\"\n[state]\nz = { unit = \"m\" }").is_err());
        assert!(parse("extends = \"woodbot\"\n[state]\nx = { unit = \"rad\" }").is_err());
        assert!(matches!(
            parse("extends = \"hovercraft\""),
            Err(DefinitionError::UnknownDefinition { .. })
        ));
    }

    #[test]
    fn extends_file_chain() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("a.toml"),
            "name = \"a\"\n[params]\nkind = \"mecanum\"\nwheel_radius = 0.05\nhalf_length = 0.2\nhalf_width = 0.15\n",
        )
        .unwrap();
        std::fs::write(
            dir.path().join("b.toml"),
            "name = \"b\"\nextends = \"a.toml\"\n",
        )
        .unwrap();
        let d = load_definition(&dir.path().join("b.toml")).unwrap();
        assert_eq!(d.name(), "b");
        assert_eq!(d.input_schema().len(), 4);
        std::fs::write(dir.path().join("c.toml"), "extends = \"c.toml\"\n").unwrap();
        assert!(load_definition(&dir.path().join("c.toml")).is_err());
    }
}
