//! Robot implementations behind one lifecycle: analytical model, emulated
//! hardware with native-unit quirks, and a remote bridge.

pub mod analytical;
pub mod bridge;
pub mod emulated;
pub mod profile;

use std::fmt;

use thiserror::Error;

use crate::record::{DefRecord, RecordError};
use crate::robot::{DefinitionError, RobotDefinition};

pub use analytical::AnalyticalBackend;
pub use bridge::BridgeBackend;
pub use emulated::EmulatedBackend;
pub use profile::{DeviceProfile, NativeUnit, ProfileOverrides, PROFILE_NAMES};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("backend is not initialized")]
    NotInitialized,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("schema incompatible: {0}")]
    SchemaIncompatible(String),
    #[error("unknown profile `{name}` (valid: {})", .valid.join(", "))]
    UnknownProfile { name: String, valid: Vec<String> },
    #[error("unknown implementation `{0}` (analytical | emulated:<profile> | bridge:<url>)")]
    UnknownImplementation(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("time went backwards: {t} < {last}")]
    TimeReversal { t: f64, last: f64 },
    #[error("schema hash mismatch: local {local}, remote {remote}")]
    SchemaHashMismatch { local: String, remote: String },
    #[error("cannot connect to {url}: {reason}")]
    Connect { url: String, reason: String },
    #[error("connection lost: {0}")]
    ConnectionLost(String),
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error(transparent)]
    Definition(#[from] DefinitionError),
    #[error(transparent)]
    Record(#[from] RecordError),
}

impl BackendError {
    /// Failures that mark a robot stale instead of aborting the run.
    pub fn is_connectivity(&self) -> bool {
        matches!(
            self,
            BackendError::Connect { .. } | BackendError::ConnectionLost(_)
        )
    }
}

/// Lifecycle shared by all implementations. `drive` and `sense` are only
/// valid between `init` and `close`.
pub trait Backend: Send {
    fn name(&self) -> &str;

    /// Whether this implementation can serve `def`.
    fn supports(&self, def: &RobotDefinition) -> Result<(), BackendError>;

    fn init(&mut self, def: &RobotDefinition, t0: f64, seed: u64) -> Result<(), BackendError>;

    /// Apply `input` as the command for the interval ending at `t`.
    fn drive(&mut self, input: &DefRecord, t: f64) -> Result<(), BackendError>;

    /// Output-space reading. Keys match the definition's output schema;
    /// units may be the device's native ones.
    fn sense(&mut self) -> Result<DefRecord, BackendError>;

    fn observe_state(&mut self) -> Result<DefRecord, BackendError>;

    fn close(&mut self) -> Result<(), BackendError>;

    /// Device update period; `None` for continuous-time models.
    fn device_timestep(&self) -> Option<f64>;
}

/// Parsed implementation reference.
#[derive(Debug, Clone, PartialEq)]
pub enum Implementation {
    Analytical,
    Emulated(String),
    Bridge(String),
}

impl Implementation {
    pub fn parse(s: &str) -> Result<Self, BackendError> {
        match s.split_once(':') {
            None if s == "analytical" => Ok(Implementation::Analytical),
            Some(("emulated", p)) => {
                if PROFILE_NAMES.contains(&p) {
                    Ok(Implementation::Emulated(p.to_string()))
                } else {
                    Err(BackendError::UnknownProfile {
                        name: p.to_string(),
                        valid: PROFILE_NAMES.iter().map(|s| s.to_string()).collect(),
                    })
                }
            }
            Some(("bridge", url)) if !url.is_empty() => Ok(Implementation::Bridge(url.to_string())),
            _ => Err(BackendError::UnknownImplementation(s.to_string())),
        }
    }

    /// Build a backend. `rate` overrides the bridge's device rate.
    pub fn build(&self, overrides: &ProfileOverrides) -> Result<Box<dyn Backend>, BackendError> {
        Ok(match self {
            Implementation::Analytical => Box::new(AnalyticalBackend::new()),
            Implementation::Emulated(p) => Box::new(EmulatedBackend::new(
                DeviceProfile::builtin(p)?.with_overrides(overrides)?,
            )),
            Implementation::Bridge(url) => {
                let mut b = BridgeBackend::new(url.clone());
                if let Some(r) = overrides.device_rate {
                    b = b.with_rate(r)?;
                }
                Box::new(b)
            }
        })
    }
}

impl fmt::Display for Implementation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Implementation::Analytical => write!(f, "analytical"),
            Implementation::Emulated(p) => write!(f, "emulated:{p}"),
            Implementation::Bridge(u) => write!(f, "bridge:{u}"),
        }
    }
}

/// Same keys as `expected`, in any order and any compatible units.
pub(crate) fn conform(
    input: &DefRecord,
    expected: &crate::record::Schema,
) -> Result<DefRecord, BackendError> {
    let got = input.schema();
    if got.len() != expected.len() || expected.keys().any(|k| !got.contains(k)) {
        return Err(BackendError::SchemaMismatch(format!(
            "expected keys [{}], got [{}]",
            expected.keys().collect::<Vec<_>>().join(", "),
            got.keys().collect::<Vec<_>>().join(", ")
        )));
    }
    Ok(input.project(expected)?)
}

/// Tick index of the device clock at time `t`. The small bias keeps exact
/// multiples (`k·dt` computed in floating point) on the right side of the
/// floor.
pub fn tick_index(t: f64, rate: f64) -> i64 {
    (t * rate + 1e-9).floor() as i64
}
