//! Run configuration files: one `[run]` table and a `[[robot]]` array.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::backend::{DeviceProfile, Implementation, ProfileOverrides};
use crate::iosys::{load_trajectory, Trajectory};
use crate::robot::{resolve_definition, RobotDefinition};
use crate::runtime::{duplicate_ids, RunConfig, SensePrecedence};

pub const DEFAULT_BIND: &str = "127.0.0.1:8765";
pub const DEFAULT_BROADCAST_RATE: f64 = 20.0;
pub const DEFAULT_OUT: &str = "out";

const RUN_KEYS: &[&str] = &[
    "dt",
    "duration",
    "realtime_factor",
    "seed",
    "input",
    "out",
    "bind",
    "broadcast_rate",
    "progress",
];
const ROBOT_KEYS: &[&str] = &[
    "id",
    "definition",
    "implementation",
    "input",
    "outputs",
    "sense",
    "profile",
];
const PROFILE_KEYS: &[&str] = &[
    "device_rate",
    "command_latency",
    "quantization",
    "deadband",
    "noise_std",
    "max_wheel_speed",
];

/// Every problem found in a configuration, not just the first.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub diagnostics: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} problem(s) in configuration", self.diagnostics.len())?;
        for d in &self.diagnostics {
            write!(f, "\n  - {d}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    fn one(msg: impl Into<String>) -> Self {
        ConfigError {
            diagnostics: vec![msg.into()],
        }
    }
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RunSection {
    dt: Option<f64>,
    duration: Option<f64>,
    realtime_factor: Option<f64>,
    seed: Option<u64>,
    input: Option<String>,
    out: Option<PathBuf>,
    bind: Option<String>,
    broadcast_rate: Option<f64>,
    progress: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RobotSection {
    id: String,
    definition: String,
    implementation: String,
    input: Option<String>,
    outputs: Option<Vec<String>>,
    sense: Option<SensePrecedence>,
    #[serde(default)]
    profile: ProfileOverrides,
}

#[derive(Debug, Clone)]
pub enum InputRef {
    None,
    Teleop,
    Trajectory {
        path: PathBuf,
        trajectory: Trajectory,
    },
}

impl InputRef {
    pub fn is_teleop(&self) -> bool {
        matches!(self, InputRef::Teleop)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OutputRef {
    Log(PathBuf),
    Broadcast,
}

#[derive(Debug, Clone)]
pub struct RobotEntry {
    pub id: String,
    pub definition: RobotDefinition,
    pub implementation: Implementation,
    pub profile: ProfileOverrides,
    /// `None` follows the system-wide input.
    pub input: Option<InputRef>,
    pub outputs: Vec<OutputRef>,
    pub sense: SensePrecedence,
}

#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub run: RunConfig,
    pub input: InputRef,
    pub out: PathBuf,
    pub bind: String,
    pub broadcast_rate: f64,
    pub robots: Vec<RobotEntry>,
}

impl ResolvedConfig {
    pub fn uses_teleop(&self) -> bool {
        self.input.is_teleop()
            || self
                .robots
                .iter()
                .any(|r| r.input.as_ref().is_some_and(InputRef::is_teleop))
    }

    pub fn uses_broadcast(&self) -> bool {
        self.robots
            .iter()
            .any(|r| r.outputs.contains(&OutputRef::Broadcast))
    }
}

/// Parse `value` as a TOML value, falling back to a bare string.
fn parse_override_value(value: &str) -> toml::Value {
    format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

/// Apply a `key=value` override. Bare keys name `[run]` fields; robots are
/// addressed as `robot.<index>.<field>`.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<(), String> {
    let (path, value) = assignment
        .split_once('=')
        .ok_or_else(|| format!("override `{assignment}` is not key=value"))?;
    let path = path.trim();
    let value = parse_override_value(value.trim());
    let parts: Vec<&str> = path.split('.').collect();
    let parts: Vec<&str> = if parts.len() == 1 {
        vec!["run", parts[0]]
    } else {
        parts
    };
    match parts.as_slice() {
        ["run", key] => {
            if !RUN_KEYS.contains(key) {
                return Err(format!(
                    "unknown key `run.{key}` (known: {})",
                    RUN_KEYS.join(", ")
                ));
            }
            let run = doc
                .entry("run")
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or("`run` is not a table")?;
            run.insert(key.to_string(), value);
            Ok(())
        }
        ["robot", index, rest @ ..] if !rest.is_empty() => {
            let robots = doc
                .get_mut("robot")
                .and_then(|r| r.as_array_mut())
                .ok_or_else(|| format!("override `{path}`: no [[robot]] entries"))?;
            let n = robots.len();
            let i: usize = index
                .parse()
                .ok()
                .filter(|i| *i < n)
                .ok_or_else(|| format!("override `{path}`: robot index must be below {n}"))?;
            let robot = robots[i]
                .as_table_mut()
                .ok_or("robot entry is not a table")?;
            match rest {
                [key] if ROBOT_KEYS.contains(key) && *key != "profile" => {
                    robot.insert(key.to_string(), value);
                    Ok(())
                }
                ["profile", key] if PROFILE_KEYS.contains(key) => {
                    let profile = robot
                        .entry("profile")
                        .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                        .as_table_mut()
                        .ok_or("`profile` is not a table")?;
                    profile.insert(key.to_string(), value);
                    Ok(())
                }
                _ => Err(format!("unknown robot key `{}`", rest.join("."))),
            }
        }
        _ => Err(format!("unknown key `{path}`")),
    }
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<ResolvedConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::one(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base, overrides)
}

/// Resolve a configuration. File references are relative to `base_dir`.
pub fn parse_config(
    text: &str,
    base_dir: &Path,
    overrides: &[String],
) -> Result<ResolvedConfig, ConfigError> {
    let mut doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::one(e.to_string()))?;
    let mut diags = Vec::new();
    for o in overrides {
        if let Err(e) = apply_override(&mut doc, o) {
            diags.push(e);
        }
    }
    for key in doc.keys() {
        if key != "run" && key != "robot" {
            diags.push(format!("unknown top-level key `{key}`"));
        }
    }

    let run: RunSection = match doc.get("run") {
        None => RunSection::default(),
        Some(toml::Value::Table(t)) => {
            toml::Value::Table(known_keys(t, RUN_KEYS, "[run]", &mut diags))
                .try_into()
                .unwrap_or_else(|e: toml::de::Error| {
                    diags.push(format!("[run]: {}", e.message()));
                    RunSection::default()
                })
        }
        Some(_) => {
            diags.push("`run` must be a table".into());
            RunSection::default()
        }
    };
    let defaults = RunConfig::default();
    let config = RunConfig {
        dt: run.dt.unwrap_or(defaults.dt),
        duration: run.duration.unwrap_or(defaults.duration),
        realtime_factor: run.realtime_factor.unwrap_or(defaults.realtime_factor),
        seed: run.seed.unwrap_or(defaults.seed),
        progress: run.progress.unwrap_or(false),
        trace: false,
    };
    if let Err(e) = config.validate() {
        diags.push(e.to_string());
    }
    let broadcast_rate = run.broadcast_rate.unwrap_or(DEFAULT_BROADCAST_RATE);
    let out = run.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let system_input = match run.input.as_deref() {
        None => InputRef::None,
        Some(s) => parse_input(s, base_dir).unwrap_or_else(|e| {
            diags.push(format!("[run] input: {e}"));
            InputRef::None
        }),
    };

    let raw_robots = match doc.get("robot") {
        None => {
            diags.push("no [[robot]] entries".into());
            Vec::new()
        }
        Some(toml::Value::Array(a)) => a.clone(),
        Some(_) => {
            diags.push("`robot` must be an array of tables ([[robot]])".into());
            Vec::new()
        }
    };
    let mut robots = Vec::new();
    for (i, raw) in raw_robots.into_iter().enumerate() {
        let label = raw
            .get("id")
            .and_then(|v| v.as_str())
            .map_or_else(|| format!("robot #{i}"), |id| format!("robot `{id}`"));
        let raw = match raw {
            toml::Value::Table(t) => {
                toml::Value::Table(known_keys(&t, ROBOT_KEYS, &label, &mut diags))
            }
            other => other,
        };
        let sec: RobotSection = match raw.try_into() {
            Ok(s) => s,
            Err(e) => {
                diags.push(format!("{label}: {}", e.message()));
                continue;
            }
        };
        if let Some(r) = resolve_robot(sec, base_dir, &out, &label, &mut diags) {
            robots.push(r);
        }
    }
    for id in duplicate_ids(robots.iter().map(|r| r.id.as_str())) {
        diags.push(format!("robot id `{id}` is used more than once"));
    }
    let resolved = ResolvedConfig {
        run: config,
        input: system_input,
        out,
        bind: run.bind.unwrap_or_else(|| DEFAULT_BIND.to_string()),
        broadcast_rate,
        robots,
    };
    if resolved.uses_broadcast() {
        if !(broadcast_rate.is_finite() && broadcast_rate > 0.0) {
            diags.push(format!("broadcast_rate must be > 0, got {broadcast_rate}"));
        } else if broadcast_rate * resolved.run.dt > 1.0 + 1e-9 {
            diags.push(format!(
                "broadcast_rate {broadcast_rate} Hz exceeds the step rate {} Hz",
                1.0 / resolved.run.dt
            ));
        }
    }
    if diags.is_empty() {
        Ok(resolved)
    } else {
        Err(ConfigError { diagnostics: diags })
    }
}

/// Copy of `table` without unknown keys, each of which is reported.
fn known_keys(
    table: &toml::Table,
    known: &[&str],
    label: &str,
    diags: &mut Vec<String>,
) -> toml::Table {
    let mut out = toml::Table::new();
    for (k, v) in table {
        if known.contains(&k.as_str()) {
            out.insert(k.clone(), v.clone());
        } else {
            diags.push(format!(
                "{label}: unknown key `{k}` (known: {})",
                known.join(", ")
            ));
        }
    }
    out
}

fn resolve_robot(
    sec: RobotSection,
    base_dir: &Path,
    out: &Path,
    label: &str,
    diags: &mut Vec<String>,
) -> Option<RobotEntry> {
    let before = diags.len();
    if sec.id.is_empty() || sec.id.contains(['/', '\\', '.']) {
        diags.push(format!(
            "{label}: id must be non-empty without `/`, `\\` or `.`"
        ));
    }
    let definition = resolve_definition(&sec.definition, base_dir)
        .map_err(|e| diags.push(format!("{label}: definition: {e}")))
        .ok();
    let implementation = Implementation::parse(&sec.implementation)
        .map_err(|e| diags.push(format!("{label}: implementation: {e}")))
        .ok();
    if let Some(Implementation::Emulated(p)) = &implementation {
        if let Err(e) = DeviceProfile::builtin(p).and_then(|d| d.with_overrides(&sec.profile)) {
            diags.push(format!("{label}: profile: {e}"));
        }
    }
    if let (Some(def), Some(imp)) = (&definition, &implementation) {
        match imp.build(&sec.profile) {
            Ok(b) => {
                if let Err(e) = b.supports(def) {
                    diags.push(format!("{label}: {e}"));
                }
            }
            Err(e) => diags.push(format!("{label}: {e}")),
        }
    }
    let input = sec.input.as_deref().and_then(|s| {
        parse_input(s, base_dir)
            .map_err(|e| diags.push(format!("{label}: input: {e}")))
            .ok()
    });
    if let (Some(def), Some(InputRef::Teleop)) = (&definition, &input) {
        if def.teleop_rules.is_empty() {
            diags.push(format!(
                "{label}: definition `{}` has no teleop rules",
                def.name()
            ));
        }
    }
    let outputs: Vec<OutputRef> = sec
        .outputs
        .unwrap_or_else(|| vec!["log".to_string()])
        .iter()
        .filter_map(|o| {
            parse_output(o, out)
                .map_err(|e| diags.push(format!("{label}: output: {e}")))
                .ok()
        })
        .collect();
    if diags.len() > before {
        return None;
    }
    Some(RobotEntry {
        id: sec.id,
        definition: definition?,
        implementation: implementation?,
        profile: sec.profile,
        input,
        outputs,
        sense: sec.sense.unwrap_or_default(),
    })
}

fn parse_input(s: &str, base_dir: &Path) -> Result<InputRef, String> {
    match s.split_once(':') {
        None if s == "none" => Ok(InputRef::None),
        None if s == "teleop" => Ok(InputRef::Teleop),
        Some(("trajectory", p)) if !p.is_empty() => {
            let path = base_dir.join(p);
            let trajectory = load_trajectory(&path).map_err(|e| match e {
                crate::iosys::IoError::Io(io) => format!("{}: {io}", path.display()),
                other => other.to_string(),
            })?;
            Ok(InputRef::Trajectory { path, trajectory })
        }
        _ => Err(format!(
            "`{s}` is not one of none, teleop, trajectory:<path>"
        )),
    }
}

fn parse_output(s: &str, out: &Path) -> Result<OutputRef, String> {
    match s.split_once(':') {
        None if s == "log" => Ok(OutputRef::Log(out.to_path_buf())),
        None if s == "broadcast" => Ok(OutputRef::Broadcast),
        Some(("log", dir)) if !dir.is_empty() => Ok(OutputRef::Log(PathBuf::from(dir))),
        _ => Err(format!("`{s}` is not one of log, log:<dir>, broadcast")),
    }
}

/// Log directories and the robots writing to each.
pub fn log_groups(cfg: &ResolvedConfig) -> BTreeMap<PathBuf, Vec<String>> {
    let mut groups: BTreeMap<PathBuf, Vec<String>> = BTreeMap::new();
    for r in &cfg.robots {
        for o in &r.outputs {
            if let OutputRef::Log(dir) = o {
                groups.entry(dir.clone()).or_default().push(r.id.clone());
            }
        }
    }
    groups
}
