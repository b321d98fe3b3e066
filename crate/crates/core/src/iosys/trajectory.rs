//! Trajectory files: CSV with a `t` column and `key[unit]` columns, the same
//! shape the log writer produces.

use std::path::Path;

use crate::record::{DefRecord, Leaf, Schema, UnitSpec};

use super::IoError;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    schema: Schema,
    times: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

/// Split `key[unit]`.
fn parse_column(col: &str) -> Option<(&str, &str)> {
    let col = col.trim();
    let open = col.find('[')?;
    let unit = col[open + 1..].strip_suffix(']')?;
    Some((&col[..open], unit))
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Trajectory, IoError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_trajectory(&text, &path.display().to_string())
}

pub fn parse_trajectory(text: &str, origin: &str) -> Result<Trajectory, IoError> {
    let err = |line: usize, message: String| IoError::Parse {
        path: origin.to_string(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let mut cols = header.iter();
    if cols.next() != Some("t") {
        return Err(err(1, "first column must be `t`".into()));
    }
    let mut leaves = Vec::new();
    let mut ignored_tail = false;
    for (i, col) in cols.enumerate() {
        if col == "stale" && i + 2 == header.len() {
            ignored_tail = true;
            continue;
        }
        let (key, unit) = parse_column(col)
            .ok_or_else(|| err(1, format!("column `{col}` is not `key[unit]`")))?;
        let spec = UnitSpec::new(unit).map_err(|e| err(1, e.to_string()))?;
        leaves.push(Leaf {
            path: key.to_string(),
            spec,
        });
    }
    let schema = Schema::from_leaves("trajectory", leaves).map_err(|e| err(1, e.to_string()))?;
    let width = schema.len();

    let mut times: Vec<f64> = Vec::new();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let expected = width + 1 + usize::from(ignored_tail);
        if rec.len() != expected {
            return Err(err(
                line,
                format!("expected {expected} fields, found {}", rec.len()),
            ));
        }
        let mut nums = rec.iter().take(width + 1).map(|cell| {
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(line, format!("`{cell}` is not a finite number")))
        });
        let t = nums.next().expect("t column")?;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(IoError::NonMonotoneTime {
                    path: origin.to_string(),
                    line,
                    t,
                });
            }
        }
        let row = nums.collect::<Result<Vec<f64>, IoError>>()?;
        times.push(t);
        rows.push(row);
    }
    Ok(Trajectory {
        schema,
        times,
        rows,
    })
}

impl Trajectory {
    /// Samples at strictly increasing times, all in `schema`.
    pub fn from_samples(schema: Schema, samples: Vec<(f64, Vec<f64>)>) -> Result<Self, IoError> {
        let mut times: Vec<f64> = Vec::with_capacity(samples.len());
        let mut rows = Vec::with_capacity(samples.len());
        for (i, (t, row)) in samples.into_iter().enumerate() {
            if row.len() != schema.len() {
                return Err(IoError::Message(format!(
                    "sample {i} has {} values, schema has {}",
                    row.len(),
                    schema.len()
                )));
            }
            if times.last().is_some_and(|&p| t <= p) {
                return Err(IoError::NonMonotoneTime {
                    path: "<memory>".into(),
                    line: i + 1,
                    t,
                });
            }
            times.push(t);
            rows.push(row);
        }
        Ok(Trajectory {
            schema,
            times,
            rows,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Zero-order hold: the last sample at or before `t`, zeros before the
    /// first one.
    pub fn sample(&self, t: f64) -> DefRecord {
        let n = self.times.partition_point(|&s| s <= t);
        let rec = match n {
            0 => DefRecord::new(&self.schema),
            _ => DefRecord::from_values(&self.schema, self.rows[n - 1].clone())
                .expect("rows match the schema"),
        };
        rec.with_timestamp(t)
    }
}
