//! Master/slave wheel links for skid-steer platforms.

use std::collections::HashSet;

use crate::record::{DefRecord, Leaf, RecordError, Schema};

use super::DefinitionError;

#[derive(Debug, Clone, PartialEq)]
pub struct WheelLinkRule {
    pub master: String,
    /// `(slave key, gain)` pairs.
    pub slaves: Vec<(String, f64)>,
}

impl WheelLinkRule {
    pub fn new(master: &str, slaves: &[&str], gain: f64) -> Self {
        WheelLinkRule {
            master: master.to_string(),
            slaves: slaves.iter().map(|s| (s.to_string(), gain)).collect(),
        }
    }
}

/// Slaves may not drive other slaves, and no key is slaved twice.
pub fn validate_links(rules: &[WheelLinkRule]) -> Result<(), DefinitionError> {
    let masters: HashSet<&str> = rules.iter().map(|r| r.master.as_str()).collect();
    let mut seen = HashSet::new();
    for r in rules {
        for (s, g) in &r.slaves {
            if masters.contains(s.as_str()) {
                return Err(DefinitionError::Invalid(format!(
                    "wheel link chain: `{s}` is both a slave and a master"
                )));
            }
            if !seen.insert(s.as_str()) {
                return Err(DefinitionError::Invalid(format!("`{s}` is slaved twice")));
            }
            if !g.is_finite() {
                return Err(DefinitionError::Invalid(format!(
                    "gain for `{s}` is not finite"
                )));
            }
        }
    }
    Ok(())
}

/// Schema of masters followed by slaves; slaves inherit their master's spec.
pub fn actuator_schema(
    masters: &Schema,
    rules: &[WheelLinkRule],
) -> Result<Schema, DefinitionError> {
    if rules.is_empty() {
        return Ok(masters.clone());
    }
    let mut leaves = masters.leaves().to_vec();
    for r in rules {
        let spec = masters
            .spec(&r.master)
            .ok_or_else(|| RecordError::UnknownKey(r.master.clone()))?;
        for (s, _) in &r.slaves {
            leaves.push(Leaf {
                path: s.clone(),
                spec: spec.clone(),
            });
        }
    }
    Ok(Schema::from_leaves(
        format!("{}.actuators", masters.name()),
        leaves,
    )?)
}

/// Each slave gets `gain × master`; masters pass through unchanged.
pub fn expand_wheel_links(
    masters: &DefRecord,
    rules: &[WheelLinkRule],
) -> Result<DefRecord, DefinitionError> {
    let schema = actuator_schema(masters.schema(), rules)?;
    let mut values = masters.values().to_vec();
    for r in rules {
        let m = masters
            .get(&r.master)
            .ok_or_else(|| RecordError::UnknownKey(r.master.clone()))?;
        values.extend(r.slaves.iter().map(|(_, g)| g * m));
    }
    let rec = DefRecord::from_values(&schema, values)?;
    Ok(match masters.timestamp() {
        Some(t) => rec.with_timestamp(t),
        None => rec,
    })
}
