//! Unit- and range-checked named-field records.
//!
//! A [`DefRecord`] is the data currency between every part of the system:
//! inputs, robot state, sensor outputs, log rows and wire frames all move as
//! records over a [`Schema`].

mod rules;
mod schema;
mod units;
mod value;

use thiserror::Error;

pub use rules::{bind, CustomFn, Interpolation, MappingRule, RuleKind};
pub use schema::{FieldDef, FieldSpec, Leaf, Schema};
pub use units::{convert_unit, Dimension, Unit, UnitSpec};
pub use value::{DefRecord, FlatEntry};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum RecordError {
    #[error("unknown unit `{0}`")]
    UnknownUnit(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid key `{0}`")]
    InvalidKey(String),
    #[error("duplicate keys: {}", .0.join(", "))]
    DuplicateKey(Vec<String>),
    #[error("dimension mismatch on `{key}`: expected {expected}, found {found}")]
    DimensionMismatch {
        key: String,
        expected: Dimension,
        found: Dimension,
    },
    #[error("`{key}` = {value} outside [{lo}, {hi}]")]
    RangeViolation {
        key: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("`{key}` = {value} is not finite")]
    NonFinite { key: String, value: f64 },
    #[error("expected {expected} values, found {found}")]
    Arity { expected: usize, found: usize },
    #[error("invalid unit spec: {0}")]
    InvalidSpec(String),
    #[error("invalid mapping rule: {0}")]
    InvalidRule(String),
}
