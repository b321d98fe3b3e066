use std::fmt;

use serde::{Deserialize, Serialize};

use super::schema::Schema;
use super::units::{Unit, UnitSpec};
use super::RecordError;

/// One `(dot.path, value, unit)` triple of the flattened serialization shared
/// by log files and wire frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatEntry(pub String, pub f64, pub String);

/// A schema-conforming set of values. Operations never mutate in place; they
/// return a new record.
#[derive(Clone, PartialEq)]
pub struct DefRecord {
    schema: Schema,
    values: Vec<f64>,
    timestamp: Option<f64>,
    stale: bool,
}

fn check_value(key: &str, spec: &UnitSpec, value: f64) -> Result<f64, RecordError> {
    if !value.is_finite() {
        return Err(RecordError::NonFinite {
            key: key.to_string(),
            value,
        });
    }
    if !spec.contains(value) {
        let (lo, hi) = spec.range().unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
        return Err(RecordError::RangeViolation {
            key: key.to_string(),
            value,
            lo,
            hi,
        });
    }
    Ok(value)
}

fn convert_for(key: &str, value: f64, from: &Unit, to: &UnitSpec) -> Result<f64, RecordError> {
    from.convert_to(value, to.unit())
        .map_err(|_| RecordError::DimensionMismatch {
            key: key.to_string(),
            expected: to.dimension(),
            found: from.dimension,
        })
}

impl DefRecord {
    /// Record with every field at its default.
    pub fn new(schema: &Schema) -> Self {
        DefRecord {
            values: schema
                .leaves()
                .iter()
                .map(|l| l.spec.default_value())
                .collect(),
            schema: schema.clone(),
            timestamp: None,
            stale: false,
        }
    }

    pub fn create<I, K>(schema: &Schema, initial: I) -> Result<Self, RecordError>
    where
        I: IntoIterator<Item = (K, f64)>,
        K: AsRef<str>,
    {
        let mut rec = DefRecord::new(schema);
        for (k, v) in initial {
            rec.put(k.as_ref(), v, None)?;
        }
        Ok(rec)
    }

    /// Build from raw values in schema order.
    pub fn from_values(schema: &Schema, values: Vec<f64>) -> Result<Self, RecordError> {
        if values.len() != schema.len() {
            return Err(RecordError::Arity {
                expected: schema.len(),
                found: values.len(),
            });
        }
        for (leaf, &v) in schema.leaves().iter().zip(&values) {
            check_value(&leaf.path, &leaf.spec, v)?;
        }
        Ok(DefRecord {
            schema: schema.clone(),
            values,
            timestamp: None,
            stale: false,
        })
    }

    pub(crate) fn put(
        &mut self,
        key: &str,
        value: f64,
        in_unit: Option<&str>,
    ) -> Result<(), RecordError> {
        let idx = self
            .schema
            .index_of(key)
            .ok_or_else(|| RecordError::UnknownKey(key.to_string()))?;
        let spec = &self.schema.leaves()[idx].spec;
        let v = match in_unit {
            Some(u) => convert_for(key, value, &Unit::lookup(u)?, spec)?,
            None => value,
        };
        self.values[idx] = check_value(key, spec, v)?;
        Ok(())
    }

    pub(crate) fn put_index(&mut self, idx: usize, value: f64) -> Result<(), RecordError> {
        let leaf = &self.schema.leaves()[idx];
        self.values[idx] = check_value(&leaf.path, &leaf.spec, value)?;
        Ok(())
    }

    /// Set `key`, converting from `in_unit` when given, then range-check.
    pub fn set_value(
        &self,
        key: &str,
        value: f64,
        in_unit: Option<&str>,
    ) -> Result<Self, RecordError> {
        let mut out = self.clone();
        out.put(key, value, in_unit)?;
        Ok(out)
    }

    pub fn get_value(&self, key: &str, out_unit: Option<&str>) -> Result<f64, RecordError> {
        let idx = self
            .schema
            .index_of(key)
            .ok_or_else(|| RecordError::UnknownKey(key.to_string()))?;
        let spec = &self.schema.leaves()[idx].spec;
        match out_unit {
            None => Ok(self.values[idx]),
            Some(u) => {
                let to = UnitSpec::new(u)?;
                convert_for(key, self.values[idx], spec.unit(), &to).map_err(|_| {
                    RecordError::DimensionMismatch {
                        key: key.to_string(),
                        expected: spec.dimension(),
                        found: to.dimension(),
                    }
                })
            }
        }
    }

    /// Raw value in the field's own unit.
    pub fn get(&self, key: &str) -> Option<f64> {
        self.schema.index_of(key).map(|i| self.values[i])
    }

    /// Like `get` but panics on a missing key; for internal code paths where
    /// the schema is known.
    pub(crate) fn at(&self, key: &str) -> f64 {
        self.get(key)
            .unwrap_or_else(|| panic!("key {key} missing from schema {}", self.schema.name()))
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn timestamp(&self) -> Option<f64> {
        self.timestamp
    }

    pub fn with_timestamp(mut self, t: f64) -> Self {
        self.timestamp = Some(t);
        self
    }

    pub fn is_stale(&self) -> bool {
        self.stale
    }

    pub fn with_stale(mut self, stale: bool) -> Self {
        self.stale = stale;
        self
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64, &UnitSpec)> {
        self.schema
            .leaves()
            .iter()
            .zip(&self.values)
            .map(|(l, &v)| (l.path.as_str(), v, &l.spec))
    }

    /// Copy onto `target`: shared keys are converted, target-only keys take
    /// defaults, source-only keys are dropped.
    pub fn project(&self, target: &Schema) -> Result<Self, RecordError> {
        let mut out = DefRecord::new(target);
        out.timestamp = self.timestamp;
        out.stale = self.stale;
        self.copy_shared_into(&mut out, |_| true)?;
        Ok(out)
    }

    pub(crate) fn copy_shared_into(
        &self,
        out: &mut DefRecord,
        mut include: impl FnMut(&str) -> bool,
    ) -> Result<(), RecordError> {
        for (i, leaf) in out.schema.clone().leaves().iter().enumerate() {
            if !include(&leaf.path) {
                continue;
            }
            if let Some(j) = self.schema.index_of(&leaf.path) {
                let src = &self.schema.leaves()[j].spec;
                let v = convert_for(&leaf.path, self.values[j], src.unit(), &leaf.spec)?;
                out.put_index(i, v)?;
            }
        }
        Ok(())
    }

    /// Nested view of the fields under `prefix`.
    pub fn nested(&self, prefix: &str) -> Result<Self, RecordError> {
        let sub = self.schema.subtree(prefix)?;
        let values = sub
            .leaves()
            .iter()
            .map(|l| self.at(&format!("{prefix}.{}", l.path)))
            .collect();
        Ok(DefRecord {
            schema: sub,
            values,
            timestamp: self.timestamp,
            stale: self.stale,
        })
    }

    pub fn flatten(&self) -> Vec<FlatEntry> {
        self.iter()
            .map(|(k, v, s)| FlatEntry(k.to_string(), v, s.unit_name().to_string()))
            .collect()
    }

    /// Rebuild from flattened entries. Entries may arrive in any unit of the
    /// matching dimension; keys absent from `entries` take defaults.
    pub fn from_flat(schema: &Schema, entries: &[FlatEntry]) -> Result<Self, RecordError> {
        let mut rec = DefRecord::new(schema);
        for FlatEntry(k, v, u) in entries {
            rec.put(k, *v, Some(u))?;
        }
        Ok(rec)
    }
}

impl fmt::Debug for DefRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{{", self.schema.name())?;
        for (i, (k, v, s)) in self.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{k}: {v} {}", s.unit_name())?;
        }
        write!(f, "}}")?;
        if self.stale {
            write!(f, " (stale)")?;
        }
        Ok(())
    }
}
