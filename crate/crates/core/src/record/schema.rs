use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::units::UnitSpec;
use super::RecordError;

/// Either a unit-carrying leaf or a nested schema.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldSpec {
    Unit(UnitSpec),
    Nested(Schema),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldDef {
    pub key: String,
    pub spec: FieldSpec,
}

impl FieldDef {
    pub fn unit(key: impl Into<String>, spec: UnitSpec) -> Self {
        FieldDef {
            key: key.into(),
            spec: FieldSpec::Unit(spec),
        }
    }

    pub fn nested(key: impl Into<String>, schema: Schema) -> Self {
        FieldDef {
            key: key.into(),
            spec: FieldSpec::Nested(schema),
        }
    }
}

/// A flattened leaf: fully-qualified dot path and its unit spec.
#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    pub path: String,
    pub spec: UnitSpec,
}

#[derive(Debug)]
struct SchemaInner {
    name: String,
    fields: Vec<FieldDef>,
    leaves: Vec<Leaf>,
    index: HashMap<String, usize>,
}

/// Ordered set of named fields. Cheap to clone; nested schemas are
/// flattened to dot paths once at construction.
#[derive(Clone)]
pub struct Schema {
    inner: Arc<SchemaInner>,
}

pub(crate) fn validate_key(key: &str) -> Result<(), RecordError> {
    if key.is_empty() || key.chars().any(char::is_whitespace) || key.split('.').any(str::is_empty) {
        return Err(RecordError::InvalidKey(key.to_string()));
    }
    Ok(())
}

impl Schema {
    pub fn new(name: impl Into<String>, fields: Vec<FieldDef>) -> Result<Self, RecordError> {
        let name = name.into();
        let mut leaves = Vec::new();
        for f in &fields {
            validate_key(&f.key)?;
            match &f.spec {
                FieldSpec::Unit(spec) => leaves.push(Leaf {
                    path: f.key.clone(),
                    spec: spec.clone(),
                }),
                FieldSpec::Nested(sub) => {
                    for leaf in sub.leaves() {
                        leaves.push(Leaf {
                            path: format!("{}.{}", f.key, leaf.path),
                            spec: leaf.spec.clone(),
                        });
                    }
                }
            }
        }
        let mut index = HashMap::with_capacity(leaves.len());
        let mut dupes = Vec::new();
        for (i, leaf) in leaves.iter().enumerate() {
            if index.insert(leaf.path.clone(), i).is_some() {
                dupes.push(leaf.path.clone());
            }
        }
        // A leaf may not also be the parent of another leaf ("a" and "a.b").
        let prefixes: HashSet<&str> = leaves
            .iter()
            .flat_map(|l| l.path.match_indices('.').map(move |(i, _)| &l.path[..i]))
            .collect();
        for leaf in &leaves {
            if prefixes.contains(leaf.path.as_str()) {
                dupes.push(leaf.path.clone());
            }
        }
        if !dupes.is_empty() {
            dupes.sort();
            dupes.dedup();
            return Err(RecordError::DuplicateKey(dupes));
        }
        Ok(Schema {
            inner: Arc::new(SchemaInner {
                name,
                fields,
                leaves,
                index,
            }),
        })
    }

    pub fn empty(name: impl Into<String>) -> Self {
        Schema::new(name, Vec::new()).expect("empty schema is valid")
    }

    /// Shorthand for flat schemas of bare units: `[("x", "m"), ("theta", "rad")]`.
    pub fn from_units(
        name: impl Into<String>,
        fields: &[(&str, &str)],
    ) -> Result<Self, RecordError> {
        let defs = fields
            .iter()
            .map(|(k, u)| Ok(FieldDef::unit(*k, UnitSpec::new(u)?)))
            .collect::<Result<Vec<_>, RecordError>>()?;
        Schema::new(name, defs)
    }

    /// Flat schema from already-qualified leaves.
    pub fn from_leaves(name: impl Into<String>, leaves: Vec<Leaf>) -> Result<Self, RecordError> {
        Schema::new(
            name,
            leaves
                .into_iter()
                .map(|l| FieldDef::unit(l.path, l.spec))
                .collect(),
        )
    }

    pub fn name(&self) -> &str {
        &self.inner.name
    }

    pub fn fields(&self) -> &[FieldDef] {
        &self.inner.fields
    }

    pub fn leaves(&self) -> &[Leaf] {
        &self.inner.leaves
    }

    pub fn len(&self) -> usize {
        self.inner.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.leaves.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.inner.leaves.iter().map(|l| l.path.as_str())
    }

    pub fn index_of(&self, key: &str) -> Option<usize> {
        self.inner.index.get(key).copied()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.inner.index.contains_key(key)
    }

    pub fn spec(&self, key: &str) -> Option<&UnitSpec> {
        self.index_of(key).map(|i| &self.inner.leaves[i].spec)
    }

    pub fn renamed(&self, name: impl Into<String>) -> Schema {
        Schema::new(name, self.inner.fields.clone()).expect("already validated")
    }

    /// Ordered concatenation; every colliding key is reported.
    pub fn concat(name: impl Into<String>, a: &Schema, b: &Schema) -> Result<Schema, RecordError> {
        let mut leaves = a.leaves().to_vec();
        leaves.extend(b.leaves().iter().cloned());
        Schema::from_leaves(name, leaves)
    }

    /// Leaves under `prefix.`, with the prefix stripped.
    pub fn subtree(&self, prefix: &str) -> Result<Schema, RecordError> {
        let dotted = format!("{prefix}.");
        let leaves: Vec<Leaf> = self
            .leaves()
            .iter()
            .filter_map(|l| {
                l.path.strip_prefix(&dotted).map(|rest| Leaf {
                    path: rest.to_string(),
                    spec: l.spec.clone(),
                })
            })
            .collect();
        if leaves.is_empty() {
            return Err(RecordError::UnknownKey(prefix.to_string()));
        }
        Schema::from_leaves(prefix, leaves)
    }

    /// Replace the spec of selected leaves, keeping order.
    pub fn map_specs(
        &self,
        name: impl Into<String>,
        mut f: impl FnMut(&Leaf) -> Result<UnitSpec, RecordError>,
    ) -> Result<Schema, RecordError> {
        let leaves = self
            .leaves()
            .iter()
            .map(|l| {
                Ok(Leaf {
                    path: l.path.clone(),
                    spec: f(l)?,
                })
            })
            .collect::<Result<Vec<_>, RecordError>>()?;
        Schema::from_leaves(name, leaves)
    }

    /// Stable digest over paths, units and ranges (not the name). Used by the
    /// bridge handshake.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for leaf in self.leaves() {
            h.update(leaf.path.as_bytes());
            h.update(b"[");
            h.update(leaf.spec.unit_name().as_bytes());
            h.update(b"]");
            if let Some((lo, hi)) = leaf.spec.range() {
                h.update(format!("{lo}:{hi}").as_bytes());
            }
            h.update(b";");
        }
        hex::encode(h.finalize())
    }
}

impl PartialEq for Schema {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.name == other.inner.name && self.inner.leaves == other.inner.leaves)
    }
}

impl fmt::Debug for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Schema");
        s.field("name", &self.inner.name);
        s.field(
            "leaves",
            &self
                .leaves()
                .iter()
                .map(|l| format!("{}[{}]", l.path, l.spec.unit_name()))
                .collect::<Vec<_>>(),
        );
        s.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_fields_flatten_to_dot_paths() {
        let wheels = Schema::from_units("wh", &[("l", "rad/s"), ("r", "rad/s")]).unwrap();
        let s = Schema::new(
            "input",
            vec![
                FieldDef::nested("wh", wheels),
                FieldDef::unit("duty", UnitSpec::new("duty").unwrap()),
            ],
        )
        .unwrap();
        assert_eq!(s.keys().collect::<Vec<_>>(), ["wh.l", "wh.r", "duty"]);
        assert_eq!(
            s.subtree("wh").unwrap().keys().collect::<Vec<_>>(),
            ["l", "r"]
        );
    }

    #[test]
    fn rejects_bad_keys() {
        for bad in ["", "a b", "a..b", ".a", "a."] {
            assert!(
                matches!(
                    Schema::from_units("s", &[(bad, "m")]),
                    Err(RecordError::InvalidKey(_))
                ),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn duplicate_and_prefix_collisions_are_reported() {
        let err = Schema::from_units("s", &[("a", "m"), ("a", "m"), ("b", "m"), ("b.c", "m")])
            .unwrap_err();
        match err {
            RecordError::DuplicateKey(keys) => assert_eq!(keys, ["a", "b"]),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn digest_ignores_name_but_not_units() {
        let a = Schema::from_units("a", &[("x", "m")]).unwrap();
        let b = Schema::from_units("b", &[("x", "m")]).unwrap();
        let c = Schema::from_units("a", &[("x", "mm")]).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }
}
