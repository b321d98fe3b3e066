use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, AtomicU8, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use crossbeam_channel::{Receiver, Sender};
use serde::Serialize;

pub type JobResult = Result<serde_json::Value, String>;
type Work = Box<dyn FnOnce() -> JobResult + Send>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Pending,
    Running,
    Done,
    Failed,
}

impl JobState {
    fn from_u8(v: u8) -> Self {
        match v {
            0 => JobState::Pending,
            1 => JobState::Running,
            2 => JobState::Done,
            _ => JobState::Failed,
        }
    }
}

/// Observer for a submitted job.
#[derive(Debug, Clone)]
pub struct JobHandle {
    pub id: u64,
    pub name: String,
    pub submitted_at: f64,
    state: Arc<AtomicU8>,
}

impl JobHandle {
    pub fn state(&self) -> JobState {
        JobState::from_u8(self.state.load(Ordering::SeqCst))
    }
}

/// Delivered to the submitter at a step boundary.
#[derive(Debug, Clone)]
pub struct JobDone {
    pub id: u64,
    pub name: String,
    pub submitted_at: f64,
    pub delivered_at: f64,
    /// Order of completion across the whole run.
    pub completion_seq: u64,
    pub result: JobResult,
}

pub(crate) struct Finished {
    pub id: u64,
    pub owner: usize,
    pub name: String,
    pub submitted_at: f64,
    pub completion_seq: u64,
    pub result: JobResult,
}

struct Task {
    id: u64,
    owner: usize,
    name: String,
    submitted_at: f64,
    state: Arc<AtomicU8>,
    work: Work,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct JobSummary {
    pub submitted: u64,
    pub done: u64,
    pub failed: u64,
}

/// Fixed-size pool running jobs off the main loop.
pub(crate) struct JobPool {
    tx: Option<Sender<Task>>,
    done_rx: Receiver<Finished>,
    threads: Vec<JoinHandle<()>>,
    next_id: u64,
    outstanding: u64,
    pub summary: JobSummary,
}

impl JobPool {
    pub fn new(size: usize) -> Self {
        let (tx, rx) = crossbeam_channel::unbounded::<Task>();
        let (done_tx, done_rx) = crossbeam_channel::unbounded();
        let seq = Arc::new(AtomicU64::new(0));
        let threads = (0..size.max(1))
            .map(|i| {
                let rx = rx.clone();
                let done_tx: Sender<Finished> = done_tx.clone();
                let seq = seq.clone();
                std::thread::Builder::new()
                    .name(format!("job-{i}"))
                    .spawn(move || {
                        for task in rx {
                            task.state.store(1, Ordering::SeqCst);
                            let result = match catch_unwind(AssertUnwindSafe(task.work)) {
                                Ok(r) => r,
                                Err(p) => Err(panic_message(&p)),
                            };
                            task.state
                                .store(if result.is_ok() { 2 } else { 3 }, Ordering::SeqCst);
                            let _ = done_tx.send(Finished {
                                id: task.id,
                                owner: task.owner,
                                name: task.name,
                                submitted_at: task.submitted_at,
                                completion_seq: seq.fetch_add(1, Ordering::SeqCst),
                                result,
                            });
                        }
                    })
                    .expect("spawn job thread")
            })
            .collect();
        JobPool {
            tx: Some(tx),
            done_rx,
            threads,
            next_id: 0,
            outstanding: 0,
            summary: JobSummary::default(),
        }
    }

    pub fn submit(&mut self, owner: usize, name: &str, t: f64, work: Work) -> JobHandle {
        self.next_id += 1;
        let state = Arc::new(AtomicU8::new(0));
        let handle = JobHandle {
            id: self.next_id,
            name: name.to_string(),
            submitted_at: t,
            state: state.clone(),
        };
        self.outstanding += 1;
        self.summary.submitted += 1;
        let task = Task {
            id: handle.id,
            owner,
            name: name.to_string(),
            submitted_at: t,
            state,
            work,
        };
        if let Some(tx) = &self.tx {
            let _ = tx.send(task);
        }
        handle
    }

    /// Completed jobs in completion order.
    pub fn completed(&mut self) -> Vec<Finished> {
        let mut out: Vec<Finished> = self.done_rx.try_iter().collect();
        out.sort_by_key(|f| f.completion_seq);
        self.account(&out);
        out
    }

    /// Block until every submitted job has finished.
    pub fn wait_all(&mut self) -> Vec<Finished> {
        let mut out = Vec::new();
        while self.outstanding > out.len() as u64 {
            match self.done_rx.recv() {
                Ok(f) => out.push(f),
                Err(_) => break,
            }
        }
        out.extend(self.done_rx.try_iter());
        out.sort_by_key(|f| f.completion_seq);
        self.account(&out);
        out
    }

    fn account(&mut self, batch: &[Finished]) {
        for f in batch {
            self.outstanding -= 1;
            if f.result.is_ok() {
                self.summary.done += 1;
            } else {
                self.summary.failed += 1;
            }
        }
    }

    pub fn shutdown(&mut self) {
        self.tx = None;
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for JobPool {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        format!("job panicked: {s}")
    } else if let Some(s) = p.downcast_ref::<String>() {
        format!("job panicked: {s}")
    } else {
        "job panicked".to_string()
    }
}
