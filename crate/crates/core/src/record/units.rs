//! Unit table and per-field unit specifications.
//!
//! Every dimension has one canonical unit (m, rad, m/s, rad/s, s, 1, count,
//! duty). Conversions only happen inside a dimension; `count` and `duty` are
//! device dimensions that nothing converts into except a mapping rule.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::RecordError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Length,
    Angle,
    LinearVelocity,
    AngularVelocity,
    Time,
    Dimensionless,
    Count,
    Duty,
}

impl Dimension {
    pub fn canonical_unit(self) -> Unit {
        let name = match self {
            Dimension::Length => "m",
            Dimension::Angle => "rad",
            Dimension::LinearVelocity => "m/s",
            Dimension::AngularVelocity => "rad/s",
            Dimension::Time => "s",
            Dimension::Dimensionless => "1",
            Dimension::Count => "count",
            Dimension::Duty => "duty",
        };
        Unit::lookup(name).expect("canonical units are in the table")
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Dimension::Length => "length",
            Dimension::Angle => "angle",
            Dimension::LinearVelocity => "linear_velocity",
            Dimension::AngularVelocity => "angular_velocity",
            Dimension::Time => "time",
            Dimension::Dimensionless => "dimensionless",
            Dimension::Count => "count",
            Dimension::Duty => "duty",
        };
        f.write_str(s)
    }
}

/// A named unit: its dimension and the multiplier to the canonical unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unit {
    pub name: &'static str,
    pub dimension: Dimension,
    pub scale_to_canonical: f64,
}

const UNIT_TABLE: &[(&str, Dimension, f64)] = &[
    ("m", Dimension::Length, 1.0),
    ("cm", Dimension::Length, 0.01),
    ("mm", Dimension::Length, 0.001),
    ("km", Dimension::Length, 1000.0),
    ("rad", Dimension::Angle, 1.0),
    ("deg", Dimension::Angle, PI / 180.0),
    ("rev", Dimension::Angle, 2.0 * PI),
    ("m/s", Dimension::LinearVelocity, 1.0),
    ("cm/s", Dimension::LinearVelocity, 0.01),
    ("mm/s", Dimension::LinearVelocity, 0.001),
    ("km/h", Dimension::LinearVelocity, 1.0 / 3.6),
    ("rad/s", Dimension::AngularVelocity, 1.0),
    ("rpm", Dimension::AngularVelocity, 2.0 * PI / 60.0),
    ("deg/s", Dimension::AngularVelocity, PI / 180.0),
    ("rev/s", Dimension::AngularVelocity, 2.0 * PI),
    ("s", Dimension::Time, 1.0),
    ("ms", Dimension::Time, 0.001),
    ("min", Dimension::Time, 60.0),
    ("1", Dimension::Dimensionless, 1.0),
    ("count", Dimension::Count, 1.0),
    ("duty", Dimension::Duty, 1.0),
];

impl Unit {
    /// Look a unit up by symbol. Unknown symbols are an error, never a pass-through.
    pub fn lookup(name: &str) -> Result<Unit, RecordError> {
        UNIT_TABLE
            .iter()
            .find(|(n, _, _)| *n == name)
            .map(|&(name, dimension, scale_to_canonical)| Unit {
                name,
                dimension,
                scale_to_canonical,
            })
            .ok_or_else(|| RecordError::UnknownUnit(name.to_string()))
    }

    pub fn all() -> impl Iterator<Item = Unit> {
        UNIT_TABLE
            .iter()
            .map(|&(name, dimension, scale_to_canonical)| Unit {
                name,
                dimension,
                scale_to_canonical,
            })
    }

    pub fn convert_to(&self, value: f64, to: &Unit) -> Result<f64, RecordError> {
        if self.dimension != to.dimension {
            return Err(RecordError::DimensionMismatch {
                key: String::new(),
                expected: to.dimension,
                found: self.dimension,
            });
        }
        if self.name == to.name {
            return Ok(value);
        }
        Ok(value * self.scale_to_canonical / to.scale_to_canonical)
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name)
    }
}

/// Unit, optional closed range and optional default for one record field.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitSpec {
    unit: Unit,
    range: Option<(f64, f64)>,
    default: Option<f64>,
}

impl UnitSpec {
    pub fn new(unit_name: &str) -> Result<Self, RecordError> {
        Ok(UnitSpec {
            unit: Unit::lookup(unit_name)?,
            range: None,
            default: None,
        })
    }

    pub fn from_unit(unit: Unit) -> Self {
        UnitSpec {
            unit,
            range: None,
            default: None,
        }
    }

    pub fn with_range(mut self, lo: f64, hi: f64) -> Result<Self, RecordError> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(RecordError::InvalidSpec(format!(
                "range [{lo}, {hi}] is not a closed interval"
            )));
        }
        self.range = Some((lo, hi));
        self.check_default()?;
        Ok(self)
    }

    pub fn with_default(mut self, default: f64) -> Result<Self, RecordError> {
        if !default.is_finite() {
            return Err(RecordError::InvalidSpec(format!(
                "default {default} is not finite"
            )));
        }
        self.default = Some(default);
        self.check_default()?;
        Ok(self)
    }

    // The effective default (explicit, else zero) must lie in range so that
    // freshly created records are always valid.
    fn check_default(&self) -> Result<(), RecordError> {
        let d = self.default_value();
        if let Some((lo, hi)) = self.range {
            if d < lo || d > hi {
                return Err(RecordError::InvalidSpec(format!(
                    "default {d} {} outside range [{lo}, {hi}]",
                    self.unit
                )));
            }
        }
        Ok(())
    }

    pub fn unit(&self) -> &Unit {
        &self.unit
    }

    pub fn unit_name(&self) -> &'static str {
        self.unit.name
    }

    pub fn dimension(&self) -> Dimension {
        self.unit.dimension
    }

    pub fn scale_to_canonical(&self) -> f64 {
        self.unit.scale_to_canonical
    }

    pub fn range(&self) -> Option<(f64, f64)> {
        self.range
    }

    pub fn default(&self) -> Option<f64> {
        self.default
    }

    /// Explicit default, else the dimension's zero.
    pub fn default_value(&self) -> f64 {
        self.default.unwrap_or(0.0)
    }

    pub fn contains(&self, value: f64) -> bool {
        match self.range {
            Some((lo, hi)) => value >= lo && value <= hi,
            None => true,
        }
    }

    pub fn clamp(&self, value: f64) -> f64 {
        match self.range {
            Some((lo, hi)) => value.clamp(lo, hi),
            None => value,
        }
    }

    /// Same spec with a different unit of the same dimension; range and
    /// default are converted along.
    pub fn in_unit(&self, unit_name: &str) -> Result<UnitSpec, RecordError> {
        let unit = Unit::lookup(unit_name)?;
        let conv = |v: f64| self.unit.convert_to(v, &unit);
        Ok(UnitSpec {
            range: match self.range {
                Some((lo, hi)) => Some((conv(lo)?, conv(hi)?)),
                None => None,
            },
            default: self.default.map(conv).transpose()?,
            unit,
        })
    }
}

/// Convert `value` from one unit spec to another of the same dimension.
pub fn convert_unit(value: f64, from: &UnitSpec, to: &UnitSpec) -> Result<f64, RecordError> {
    from.unit.convert_to(value, &to.unit)
}
