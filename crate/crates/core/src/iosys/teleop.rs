//! Teleop commands: the teleop schema, wire messages, and a latest-wins hub.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::record::{bind, DefRecord, FieldDef, MappingRule, RecordError, Schema, UnitSpec};

use super::IoError;

pub const TELEOP_KEYS: [&str; 3] = ["fwd", "turn", "strafe"];

/// `fwd`, `turn`, `strafe`: dimensionless, each in [-1, 1].
pub fn teleop_schema() -> Schema {
    static SCHEMA: OnceLock<Schema> = OnceLock::new();
    SCHEMA
        .get_or_init(|| {
            let spec = UnitSpec::new("1")
                .and_then(|s| s.with_range(-1.0, 1.0))
                .expect("static spec");
            Schema::new(
                "teleop",
                TELEOP_KEYS
                    .iter()
                    .map(|k| FieldDef::unit(*k, spec.clone()))
                    .collect(),
            )
            .expect("static schema")
        })
        .clone()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TeleopTarget {
    All,
    Robot(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeleopCommand {
    pub source: String,
    pub t_received: f64,
    pub keys: BTreeMap<String, f64>,
    pub target: TeleopTarget,
}

impl TeleopCommand {
    pub fn new(source: impl Into<String>, keys: &[(&str, f64)]) -> Self {
        TeleopCommand {
            source: source.into(),
            t_received: 0.0,
            keys: keys.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            target: TeleopTarget::All,
        }
    }

    pub fn to_robot(mut self, id: impl Into<String>) -> Self {
        self.target = TeleopTarget::Robot(id.into());
        self
    }

    /// Keys not named by the command are zero.
    pub fn to_record(&self) -> Result<DefRecord, RecordError> {
        DefRecord::create(
            &teleop_schema(),
            self.keys.iter().map(|(k, v)| (k.as_str(), *v)),
        )
    }
}

/// Map a teleop command onto a robot input schema through `rules`.
pub fn teleop_to_input(
    cmd: &TeleopCommand,
    rules: &[MappingRule],
    target: &Schema,
) -> Result<DefRecord, RecordError> {
    bind(&DefRecord::new(target), &cmd.to_record()?, rules)
}

/// `{"type":"teleop","keys":{...},"target":"all" | "<robot id>"}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeleopMessage {
    #[serde(rename = "type")]
    pub kind: String,
    pub keys: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

impl TeleopMessage {
    /// Parse a wire message. Unknown keys are rejected; values are clamped
    /// to the teleop ranges.
    pub fn parse(text: &str, source: &str, t_received: f64) -> Result<TeleopCommand, IoError> {
        let msg: TeleopMessage = serde_json::from_str(text)
            .map_err(|e| IoError::Message(format!("bad teleop frame: {e}")))?;
        if msg.kind != "teleop" {
            return Err(IoError::Message(format!(
                "unexpected message type `{}`",
                msg.kind
            )));
        }
        let schema = teleop_schema();
        let mut keys = BTreeMap::new();
        for (k, v) in msg.keys {
            let spec = schema
                .spec(&k)
                .ok_or_else(|| IoError::Record(RecordError::UnknownKey(k.clone())))?;
            if !v.is_finite() {
                return Err(IoError::Record(RecordError::NonFinite { key: k, value: v }));
            }
            keys.insert(k, spec.clamp(v));
        }
        let target = match msg.target.as_deref() {
            None | Some("all") | Some("") => TeleopTarget::All,
            Some(id) => TeleopTarget::Robot(id.to_string()),
        };
        Ok(TeleopCommand {
            source: source.to_string(),
            t_received,
            keys,
            target,
        })
    }
}

#[derive(Debug, Default)]
struct HubState {
    seq: u64,
    /// Newest command per (source, target), tagged with arrival order.
    latest: BTreeMap<(String, TeleopTarget), (u64, TeleopCommand)>,
}

/// Shared teleop inbox. Writers push from any thread; the orchestrator reads
/// a consistent view once per step.
#[derive(Debug, Clone)]
pub struct TeleopHub {
    state: Arc<Mutex<HubState>>,
    epoch: Instant,
}

impl Default for TeleopHub {
    fn default() -> Self {
        TeleopHub::new()
    }
}

/// Per-target teleop records resolved for one step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TeleopFrame {
    pub all: Option<DefRecord>,
    pub robots: BTreeMap<String, DefRecord>,
}

impl TeleopFrame {
    /// A robot's own command wins over the system-wide one.
    pub fn for_robot(&self, id: &str) -> Option<&DefRecord> {
        self.robots.get(id).or(self.all.as_ref())
    }
}

impl TeleopHub {
    pub fn new() -> Self {
        TeleopHub {
            state: Arc::new(Mutex::new(HubState::default())),
            epoch: Instant::now(),
        }
    }

    /// Seconds since the hub was created; used to stamp network commands.
    pub fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }

    pub fn push(&self, cmd: TeleopCommand) {
        let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
        st.seq += 1;
        let seq = st.seq;
        st.latest
            .insert((cmd.source.clone(), cmd.target.clone()), (seq, cmd));
    }

    /// Latest-wins across sources for each target.
    pub fn frame(&self) -> Result<TeleopFrame, RecordError> {
        let st = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let mut newest: BTreeMap<&TeleopTarget, (u64, &TeleopCommand)> = BTreeMap::new();
        for ((_, target), (seq, cmd)) in &st.latest {
            match newest.get(target) {
                Some((s, _)) if s > seq => {}
                _ => {
                    newest.insert(target, (*seq, cmd));
                }
            }
        }
        let mut frame = TeleopFrame::default();
        for (target, (_, cmd)) in newest {
            let rec = cmd.to_record()?;
            match target {
                TeleopTarget::All => frame.all = Some(rec),
                TeleopTarget::Robot(id) => {
                    frame.robots.insert(id.clone(), rec);
                }
            }
        }
        Ok(frame)
    }
}
