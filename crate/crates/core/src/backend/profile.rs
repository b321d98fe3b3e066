//! Device profiles: native actuator unit, device rate, and command quirks.

use serde::{Deserialize, Serialize};

use crate::record::{MappingRule, RecordError, Schema, UnitSpec};
use crate::robot::RobotDefinition;

use super::BackendError;

pub const PROFILE_NAMES: &[&str] = &[
    "webots-like",
    "dynabot-like",
    "woodbot-like",
    "create2-like",
];

/// Counts are wheel surface speed in mm/s.
pub const COUNTS_PER_MPS: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NativeUnit {
    RadPerSec,
    Rpm,
    Duty,
    Count,
}

impl NativeUnit {
    pub fn unit_name(self) -> &'static str {
        match self {
            NativeUnit::RadPerSec => "rad/s",
            NativeUnit::Rpm => "rpm",
            NativeUnit::Duty => "duty",
            NativeUnit::Count => "count",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceProfile {
    pub name: String,
    pub native_unit: NativeUnit,
    /// Closed actuator range in native units.
    pub native_range: Option<(f64, f64)>,
    pub device_rate: f64,
    pub command_latency: f64,
    /// Step size in native units; 0 disables quantization.
    pub quantization: f64,
    /// Commands with magnitude at or below this (native units) become zero.
    pub deadband: f64,
    /// Range-sensor noise in `range_unit`.
    pub noise_std: f64,
    /// Unit the device reports range readings in.
    pub range_unit: String,
    /// Wheel speed (rad/s) at full duty.
    pub max_wheel_speed: f64,
}

/// Per-robot tweaks read from the run configuration.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileOverrides {
    pub device_rate: Option<f64>,
    pub command_latency: Option<f64>,
    pub quantization: Option<f64>,
    pub deadband: Option<f64>,
    pub noise_std: Option<f64>,
    pub max_wheel_speed: Option<f64>,
}

impl DeviceProfile {
    pub fn builtin(name: &str) -> Result<Self, BackendError> {
        let base = |native_unit,
                    native_range,
                    device_rate,
                    quantization,
                    deadband,
                    noise_std,
                    range_unit: &str| {
            DeviceProfile {
                name: name.to_string(),
                native_unit,
                native_range,
                device_rate,
                command_latency: 0.0,
                quantization,
                deadband,
                noise_std,
                range_unit: range_unit.to_string(),
                max_wheel_speed: 10.0,
            }
        };
        Ok(match name {
            "webots-like" => base(NativeUnit::RadPerSec, None, 1000.0, 0.0, 0.0, 0.0, "m"),
            "dynabot-like" => base(NativeUnit::Rpm, None, 100.0, 1.0, 0.0, 0.0, "m"),
            "woodbot-like" => base(
                NativeUnit::Duty,
                Some((-1.0, 1.0)),
                5.0,
                0.01,
                0.05,
                2.0,
                "mm",
            ),
            "create2-like" => base(
                NativeUnit::Count,
                Some((-500.0, 500.0)),
                20.0,
                1.0,
                0.0,
                2.0,
                "mm",
            ),
            other => {
                return Err(BackendError::UnknownProfile {
                    name: other.to_string(),
                    valid: PROFILE_NAMES.iter().map(|s| s.to_string()).collect(),
                })
            }
        })
    }

    pub fn with_overrides(mut self, o: &ProfileOverrides) -> Result<Self, BackendError> {
        if let Some(v) = o.device_rate {
            self.device_rate = v;
        }
        if let Some(v) = o.command_latency {
            self.command_latency = v;
        }
        if let Some(v) = o.quantization {
            self.quantization = v;
        }
        if let Some(v) = o.deadband {
            self.deadband = v;
        }
        if let Some(v) = o.noise_std {
            self.noise_std = v;
        }
        if let Some(v) = o.max_wheel_speed {
            self.max_wheel_speed = v;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: String| Err(BackendError::InvalidProfile(format!("{}: {m}", self.name)));
        if !(self.device_rate.is_finite() && self.device_rate > 0.0) {
            return bad(format!("device_rate must be > 0, got {}", self.device_rate));
        }
        for (n, v) in [
            ("command_latency", self.command_latency),
            ("quantization", self.quantization),
            ("deadband", self.deadband),
            ("noise_std", self.noise_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{n} must be >= 0, got {v}"));
            }
        }
        if !(self.max_wheel_speed.is_finite() && self.max_wheel_speed > 0.0) {
            return bad(format!(
                "max_wheel_speed must be > 0, got {}",
                self.max_wheel_speed
            ));
        }
        Ok(())
    }

    pub fn device_timestep(&self) -> f64 {
        1.0 / self.device_rate
    }

    fn native_spec(&self) -> Result<UnitSpec, RecordError> {
        let spec = UnitSpec::new(self.native_unit.unit_name())?;
        match self.native_range {
            Some((lo, hi)) => spec.with_range(lo, hi),
            None => Ok(spec),
        }
    }

    /// Actuator keys in the native unit.
    pub fn native_schema(&self, def: &RobotDefinition) -> Result<Schema, BackendError> {
        let spec = self.native_spec()?;
        Ok(def
            .actuator_schema()
            .map_specs(format!("{}.native", def.name()), |_| Ok(spec.clone()))?)
    }

    /// Rules from actuator rad/s to native commands. Unit-convertible
    /// profiles need none: projection converts them.
    pub fn native_rules(&self, def: &RobotDefinition) -> Result<Vec<MappingRule>, BackendError> {
        let mut rules = Vec::new();
        for key in def.actuator_schema().keys() {
            let gain = match self.native_unit {
                NativeUnit::RadPerSec | NativeUnit::Rpm => continue,
                NativeUnit::Duty => 1.0 / self.max_wheel_speed,
                NativeUnit::Count => self.wheel_radius(def, key)? * COUNTS_PER_MPS,
            };
            rules.push(
                MappingRule::linear(&[key], &[key], gain, 0.0)?
                    .with_source_unit("rad/s")?
                    .saturating(true),
            );
        }
        Ok(rules)
    }

    /// Native command back to wheel rad/s.
    pub fn to_rad_per_sec(
        &self,
        def: &RobotDefinition,
        key: &str,
        v: f64,
    ) -> Result<f64, BackendError> {
        Ok(match self.native_unit {
            NativeUnit::RadPerSec => v,
            NativeUnit::Rpm => crate::record::Unit::lookup("rpm")?
                .convert_to(v, &crate::record::Unit::lookup("rad/s")?)?,
            NativeUnit::Duty => v * self.max_wheel_speed,
            NativeUnit::Count => v / (self.wheel_radius(def, key)? * COUNTS_PER_MPS),
        })
    }

    fn wheel_radius(&self, def: &RobotDefinition, key: &str) -> Result<f64, BackendError> {
        def.wheel_radius_for(key)
            .ok_or_else(|| BackendError::SchemaIncompatible(format!("`{key}` is not a wheel")))
    }

    /// Deadband, round half-to-even onto the quantization grid, clamp.
    pub fn condition(&self, v: f64) -> f64 {
        let mut v = if v.abs() <= self.deadband { 0.0 } else { v };
        if self.quantization > 0.0 {
            v = (v / self.quantization).round_ties_even() * self.quantization;
        }
        if let Some((lo, hi)) = self.native_range {
            v = v.clamp(lo, hi);
        }
        // normalise -0.0 so logs are sign-stable
        v + 0.0
    }
}
