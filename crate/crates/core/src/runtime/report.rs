use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;

use crate::record::FlatEntry;

use super::jobs::JobSummary;
use super::trace::TraceEvent;

#[derive(Debug, Clone, Serialize)]
pub struct RobotReport {
    pub id: String,
    pub definition: String,
    pub implementation: String,
    pub steps_completed: u64,
    /// `[start, end]` times during which the robot was flagged stale.
    pub stale_intervals: Vec<[f64; 2]>,
    pub ended_stale: bool,
    pub failure: Option<String>,
    pub final_state: Vec<FlatEntry>,
    /// Clock values this robot's worker actually stepped at.
    #[serde(skip)]
    pub observed_t: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub steps: u64,
    pub dt: f64,
    pub duration: f64,
    pub realtime_factor: f64,
    pub seed: u64,
    pub wall_time_s: f64,
    pub interrupted: bool,
    pub step_time_p50_s: f64,
    pub step_time_p99_s: f64,
    pub robots: Vec<RobotReport>,
    pub log_files: BTreeMap<String, Vec<PathBuf>>,
    pub jobs: JobSummary,
    pub output_errors: Vec<String>,
    #[serde(skip)]
    pub trace: Vec<TraceEvent>,
}

impl RunReport {
    pub fn any_stale(&self) -> bool {
        self.robots.iter().any(|r| r.ended_stale)
    }

    pub fn robot(&self, id: &str) -> Option<&RobotReport> {
        self.robots.iter().find(|r| r.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Short human-readable summary.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{} steps (dt {} s) in {:.3} s wall{}\n",
            self.steps,
            self.dt,
            self.wall_time_s,
            if self.interrupted {
                ", interrupted"
            } else {
                ""
            }
        );
        for r in &self.robots {
            let pose: Vec<String> = r
                .final_state
                .iter()
                .map(|FlatEntry(k, v, u)| format!("{k}={v:.4}{u}"))
                .collect();
            s.push_str(&format!(
                "  {} [{} / {}]: {}{}\n",
                r.id,
                r.definition,
                r.implementation,
                pose.join(" "),
                if r.ended_stale { " (stale)" } else { "" }
            ));
            if let Some(f) = &r.failure {
                s.push_str(&format!("    failure: {f}\n"));
            }
        }
        if self.jobs.submitted > 0 {
            s.push_str(&format!(
                "  jobs: {} submitted, {} done, {} failed\n",
                self.jobs.submitted, self.jobs.done, self.jobs.failed
            ));
        }
        for e in &self.output_errors {
            s.push_str(&format!("  output error: {e}\n"));
        }
        s
    }
}

/// Nearest-rank percentile; 0 for an empty sample.
pub fn percentile(samples: &[f64], q: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}
