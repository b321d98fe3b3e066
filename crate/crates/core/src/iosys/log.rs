//! Per-robot CSV logs: `<dir>/<id>_<space>.csv` with a `t` column, one
//! `key[unit]` column per field, and a trailing `stale` column.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::record::{DefRecord, Schema};
use crate::runtime::{OutputSystem, RobotHandle, RobotSnapshot, StepSnapshot};

use super::IoError;

pub const LOG_SPACES: [&str; 3] = ["input", "state", "output"];

pub fn log_header(schema: &Schema) -> String {
    let mut h = String::from("t");
    for leaf in schema.leaves() {
        h.push_str(&format!(",{}[{}]", leaf.path, leaf.spec.unit_name()));
    }
    h.push_str(",stale");
    h
}

pub fn log_row(t: f64, rec: &DefRecord, stale: bool) -> String {
    let mut row = format!("{t}");
    for v in rec.values() {
        row.push_str(&format!(",{v}"));
    }
    row.push_str(if stale { ",1" } else { ",0" });
    row
}

pub fn log_path(dir: &Path, id: &str, space: &str) -> PathBuf {
    dir.join(format!("{id}_{space}.csv"))
}

struct RobotFiles {
    id: String,
    files: Vec<(PathBuf, BufWriter<File>)>,
}

pub struct LogWriter {
    dir: PathBuf,
    only: Option<BTreeSet<String>>,
    robots: Vec<RobotFiles>,
}

impl LogWriter {
    /// Logs every robot in the run.
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        LogWriter {
            dir: dir.into(),
            only: None,
            robots: Vec::new(),
        }
    }

    /// Logs only the listed robots.
    pub fn for_robots(dir: impl Into<PathBuf>, ids: impl IntoIterator<Item = String>) -> Self {
        LogWriter {
            only: Some(ids.into_iter().collect()),
            ..LogWriter::new(dir)
        }
    }

    fn wants(&self, id: &str) -> bool {
        self.only.as_ref().is_none_or(|s| s.contains(id))
    }
}

fn space_record<'a>(r: &'a RobotSnapshot, space: &str) -> &'a DefRecord {
    match space {
        "input" => &r.input,
        "state" => &r.state,
        _ => &r.output,
    }
}

impl OutputSystem for LogWriter {
    fn name(&self) -> String {
        format!("log:{}", self.dir.display())
    }

    fn start(&mut self, _robots: &[RobotHandle]) -> Result<(), IoError> {
        std::fs::create_dir_all(&self.dir)?;
        Ok(())
    }

    fn consume(&mut self, step: &StepSnapshot) -> Result<(), IoError> {
        for r in &step.robots {
            if !self.wants(&r.id) {
                continue;
            }
            let pos = match self.robots.iter().position(|f| f.id == r.id) {
                Some(p) => p,
                None => {
                    let mut files = Vec::new();
                    for space in LOG_SPACES {
                        let path = log_path(&self.dir, &r.id, space);
                        let mut w = BufWriter::new(File::create(&path)?);
                        writeln!(w, "{}", log_header(space_record(r, space).schema()))?;
                        files.push((path, w));
                    }
                    self.robots.push(RobotFiles {
                        id: r.id.clone(),
                        files,
                    });
                    self.robots.len() - 1
                }
            };
            for ((_, w), space) in self.robots[pos].files.iter_mut().zip(LOG_SPACES) {
                writeln!(w, "{}", log_row(step.t, space_record(r, space), r.stale))?;
            }
        }
        Ok(())
    }

    fn finalize(&mut self) -> Result<Vec<(String, PathBuf)>, IoError> {
        let mut out = Vec::new();
        for r in &mut self.robots {
            for (path, w) in &mut r.files {
                w.flush()?;
                out.push((r.id.clone(), path.clone()));
            }
        }
        Ok(out)
    }
}
