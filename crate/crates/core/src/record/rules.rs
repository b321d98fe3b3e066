//! Mapping rules between records of different schemas.

use std::fmt;
use std::sync::Arc;

use super::schema::validate_key;
use super::units::Unit;
use super::value::DefRecord;
use super::RecordError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Hold,
    Linear,
}

type CustomBody = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// A named pure function. Equality is by name.
#[derive(Clone)]
pub struct CustomFn {
    name: String,
    func: Arc<CustomBody>,
}

impl CustomFn {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        CustomFn {
            name: name.into(),
            func: Arc::new(f),
        }
    }

    /// Functions that definition files can name; every output is scaled by
    /// `gain`.
    pub fn builtin(name: &str, gain: f64) -> Option<CustomFn> {
        let body: fn(&[f64]) -> Vec<f64> = match name {
            // (fwd, turn) -> (left, right)
            "diff_mix" => |x| match x {
                [f, t] => vec![f - t, f + t],
                _ => Vec::new(),
            },
            // (fwd, strafe, turn) -> (fl, fr, rl, rr)
            "mecanum_mix" => |x| match x {
                [f, s, t] => vec![f - s - t, f + s + t, f + s - t, f - s + t],
                _ => Vec::new(),
            },
            "negate" => |x| x.iter().map(|v| -v).collect(),
            "sum" => |x| vec![x.iter().sum()],
            _ => return None,
        };
        let label = if gain == 1.0 {
            name.to_string()
        } else {
            format!("{name}*{gain}")
        };
        Some(CustomFn::new(label, move |x| {
            body(x).into_iter().map(|v| v * gain).collect()
        }))
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &["diff_mix", "mecanum_mix", "negate", "sum"]
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    fn call(&self, x: &[f64]) -> Vec<f64> {
        (self.func)(x)
    }
}

impl fmt::Debug for CustomFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomFn({})", self.name)
    }
}

impl PartialEq for CustomFn {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RuleKind {
    Linear {
        gain: f64,
        offset: f64,
    },
    /// Breakpoints `(source, target)`, strictly increasing in source.
    Lookup {
        table: Vec<(f64, f64)>,
        interpolation: Interpolation,
    },
    Broadcast,
    Custom(CustomFn),
}

/// Maps source fields to target fields. Sources are read in their field unit
/// (or `source_unit`), targets are written in their field unit (or
/// `target_unit`). A saturating rule clamps into the target range instead of
/// failing.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingRule {
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    pub kind: RuleKind,
    pub saturating: bool,
    pub source_unit: Option<Unit>,
    pub target_unit: Option<Unit>,
}

impl MappingRule {
    pub fn new(
        sources: Vec<String>,
        targets: Vec<String>,
        kind: RuleKind,
    ) -> Result<Self, RecordError> {
        if sources.is_empty() || targets.is_empty() {
            return Err(RecordError::InvalidRule(
                "rule needs sources and targets".into(),
            ));
        }
        for k in sources.iter().chain(&targets) {
            validate_key(k)?;
        }
        let elementwise = sources.len() == 1 || sources.len() == targets.len();
        match &kind {
            RuleKind::Linear { gain, offset } => {
                if !gain.is_finite() || !offset.is_finite() {
                    return Err(RecordError::InvalidRule("non-finite gain or offset".into()));
                }
                if !elementwise {
                    return Err(RecordError::InvalidRule(format!(
                        "linear rule maps {} sources to {} targets",
                        sources.len(),
                        targets.len()
                    )));
                }
            }
            RuleKind::Lookup { table, .. } => {
                if table.is_empty() {
                    return Err(RecordError::InvalidRule("empty lookup table".into()));
                }
                if table.windows(2).any(|w| !(w[0].0 < w[1].0)) {
                    return Err(RecordError::InvalidRule(
                        "lookup breakpoints must be strictly increasing".into(),
                    ));
                }
                if !elementwise {
                    return Err(RecordError::InvalidRule("lookup arity mismatch".into()));
                }
            }
            RuleKind::Broadcast => {
                if sources.len() != 1 {
                    return Err(RecordError::InvalidRule(
                        "broadcast takes exactly one source".into(),
                    ));
                }
            }
            RuleKind::Custom(_) => {}
        }
        Ok(MappingRule {
            sources,
            targets,
            kind,
            saturating: false,
            source_unit: None,
            target_unit: None,
        })
    }

    pub fn linear(
        sources: &[&str],
        targets: &[&str],
        gain: f64,
        offset: f64,
    ) -> Result<Self, RecordError> {
        MappingRule::new(
            strings(sources),
            strings(targets),
            RuleKind::Linear { gain, offset },
        )
    }

    pub fn broadcast(source: &str, targets: &[&str]) -> Result<Self, RecordError> {
        MappingRule::new(
            vec![source.to_string()],
            strings(targets),
            RuleKind::Broadcast,
        )
    }

    pub fn lookup(
        source: &str,
        target: &str,
        table: Vec<(f64, f64)>,
        interpolation: Interpolation,
    ) -> Result<Self, RecordError> {
        MappingRule::new(
            vec![source.to_string()],
            vec![target.to_string()],
            RuleKind::Lookup {
                table,
                interpolation,
            },
        )
    }

    pub fn custom(sources: &[&str], targets: &[&str], f: CustomFn) -> Result<Self, RecordError> {
        MappingRule::new(strings(sources), strings(targets), RuleKind::Custom(f))
    }

    pub fn saturating(mut self, on: bool) -> Self {
        self.saturating = on;
        self
    }

    pub fn with_source_unit(mut self, unit: &str) -> Result<Self, RecordError> {
        self.source_unit = Some(Unit::lookup(unit)?);
        Ok(self)
    }

    pub fn with_target_unit(mut self, unit: &str) -> Result<Self, RecordError> {
        self.target_unit = Some(Unit::lookup(unit)?);
        Ok(self)
    }

    /// Pure evaluation on source values; returns one value per target.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>, RecordError> {
        let n = self.targets.len();
        let pick = |i: usize| if x.len() == 1 { x[0] } else { x[i] };
        let out = match &self.kind {
            RuleKind::Linear { gain, offset } => (0..n).map(|i| gain * pick(i) + offset).collect(),
            RuleKind::Lookup {
                table,
                interpolation,
            } => (0..n)
                .map(|i| lookup(table, *interpolation, pick(i)))
                .collect(),
            RuleKind::Broadcast => vec![x[0]; n],
            RuleKind::Custom(f) => {
                let out = f.call(x);
                if out.len() != n {
                    return Err(RecordError::InvalidRule(format!(
                        "custom function {} returned {} values for {n} targets",
                        f.name(),
                        out.len()
                    )));
                }
                out
            }
        };
        Ok(out)
    }

    /// Check that every named key exists in the given schemas, and that any
    /// unit overrides match the field dimensions.
    pub fn check_against(
        &self,
        source: &super::Schema,
        target: &super::Schema,
    ) -> Result<(), RecordError> {
        for (keys, schema, unit) in [
            (&self.sources, source, self.source_unit),
            (&self.targets, target, self.target_unit),
        ] {
            for k in keys {
                let spec = schema
                    .spec(k)
                    .ok_or_else(|| RecordError::UnknownKey(k.clone()))?;
                if let Some(u) = unit {
                    if u.dimension != spec.dimension() {
                        return Err(RecordError::DimensionMismatch {
                            key: k.clone(),
                            expected: spec.dimension(),
                            found: u.dimension,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

fn strings(keys: &[&str]) -> Vec<String> {
    keys.iter().map(|s| s.to_string()).collect()
}

fn lookup(table: &[(f64, f64)], interp: Interpolation, x: f64) -> f64 {
    let first = table[0];
    let last = table[table.len() - 1];
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    // first breakpoint strictly greater than x; x lies in [hi-1, hi)
    let hi = table.partition_point(|&(bx, _)| bx <= x);
    let (x0, y0) = table[hi - 1];
    let (x1, y1) = table[hi];
    match interp {
        Interpolation::Hold => y0,
        Interpolation::Linear => y0 + (y1 - y0) * (x - x0) / (x1 - x0),
    }
}

/// Map `source` onto `target` through `rules`, applied in order (later rules
/// overwrite earlier ones). Keys no rule writes follow projection: copied
/// when shared, otherwise the target's current value is kept.
pub fn bind(
    target: &DefRecord,
    source: &DefRecord,
    rules: &[MappingRule],
) -> Result<DefRecord, RecordError> {
    for r in rules {
        r.check_against(source.schema(), target.schema())?;
    }
    let mut out = target.clone();
    let ruled: std::collections::HashSet<&str> = rules
        .iter()
        .flat_map(|r| r.targets.iter().map(String::as_str))
        .collect();
    source.copy_shared_into(&mut out, |k| !ruled.contains(k))?;

    for r in rules {
        let xs = r
            .sources
            .iter()
            .map(|k| {
                let v = source.at(k);
                match r.source_unit {
                    Some(u) => source
                        .schema()
                        .spec(k)
                        .expect("checked")
                        .unit()
                        .convert_to(v, &u),
                    None => Ok(v),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let ys = r.evaluate(&xs)?;
        for (k, y) in r.targets.iter().zip(ys) {
            let spec = out.schema().spec(k).expect("checked").clone();
            let mut y = match r.target_unit {
                Some(u) => u.convert_to(y, spec.unit())?,
                None => y,
            };
            if r.saturating {
                y = spec.clamp(y);
            }
            let idx = out.schema().index_of(k).expect("checked");
            out.put_index(idx, y)?;
        }
    }
    Ok(out)
}
