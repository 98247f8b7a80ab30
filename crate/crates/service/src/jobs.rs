//! Single-flight FIFO queue of finetune jobs, executed on one worker thread.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use texfx_core::train::{FinetuneJob, FinetuneOptions, JobStatus, StepLog};

use crate::api::ApiError;
use crate::store::CheckpointStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    /// Glyph and style reference.
    Supervised,
    /// Style reference only.
    Unsupervised,
    /// Style reference plus guidance strokes.
    Guided,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSample {
    pub iter: usize,
    pub gen_total: f64,
    pub disc_total: f64,
}

/// Pollable state of a finetune job. Times are milliseconds since the Unix epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    pub base_checkpoint: String,
    /// Checkpoint written on success.
    pub result_checkpoint: Option<String>,
    pub iterations: usize,
    pub iterations_done: usize,
    pub created_at: u64,
    pub started_at: Option<u64>,
    pub finished_at: Option<u64>,
    pub losses: Vec<LossSample>,
    pub error: Option<String>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Keep about this many loss samples per job.
const LOSS_SAMPLES: usize = 100;

struct State {
    records: BTreeMap<String, JobRecord>,
    pending: VecDeque<(FinetuneJob, FinetuneOptions)>,
    running: bool,
    next_id: u64,
}

struct Inner {
    state: Mutex<State>,
    wake: Condvar,
    store: Arc<CheckpointStore>,
    allow_queue: bool,
}

#[derive(Clone)]
pub struct JobQueue {
    inner: Arc<Inner>,
}

impl JobQueue {
    /// Starts the worker. With `allow_queue` false a submission while another job is
    /// queued or running is rejected with a conflict.
    pub fn start(store: Arc<CheckpointStore>, allow_queue: bool) -> Self {
        let inner = Arc::new(Inner {
            state: Mutex::new(State {
                records: BTreeMap::new(),
                pending: VecDeque::new(),
                running: false,
                next_id: 1,
            }),
            wake: Condvar::new(),
            store,
            allow_queue,
        });
        let worker = inner.clone();
        std::thread::Builder::new()
            .name("finetune-worker".into())
            .spawn(move || work(&worker))
            .expect("spawn finetune worker");
        Self { inner }
    }

    pub fn next_id(&self) -> String {
        let mut st = self.inner.state.lock().unwrap();
        let id = format!("job-{:06}", st.next_id);
        st.next_id += 1;
        id
    }

    pub fn submit(&self, job: FinetuneJob, opts: FinetuneOptions) -> Result<JobRecord, ApiError> {
        let mut st = self.inner.state.lock().unwrap();
        if !self.inner.allow_queue && (st.running || !st.pending.is_empty()) {
            return Err(ApiError::conflict("a finetune job is already in progress"));
        }
        let kind = match (&job.glyph, &job.masks) {
            (Some(_), _) => JobKind::Supervised,
            (None, Some(_)) => JobKind::Guided,
            (None, None) => JobKind::Unsupervised,
        };
        let record = JobRecord {
            job_id: job.job_id.clone(),
            kind,
            status: JobStatus::Queued,
            base_checkpoint: job.base_checkpoint.clone(),
            result_checkpoint: None,
            iterations: opts.iterations,
            iterations_done: 0,
            created_at: now_ms(),
            started_at: None,
            finished_at: None,
            losses: Vec::new(),
            error: None,
        };
        st.records.insert(job.job_id.clone(), record.clone());
        st.pending.push_back((job, opts));
        self.inner.wake.notify_all();
        Ok(record)
    }

    pub fn get(&self, job_id: &str) -> Option<JobRecord> {
        self.inner.state.lock().unwrap().records.get(job_id).cloned()
    }

    pub fn list(&self) -> Vec<JobRecord> {
        self.inner.state.lock().unwrap().records.values().cloned().collect()
    }
}

fn update(inner: &Inner, id: &str, f: impl FnOnce(&mut JobRecord)) {
    if let Some(r) = inner.state.lock().unwrap().records.get_mut(id) {
        f(r);
    }
}

fn work(inner: &Inner) {
    loop {
        let (mut job, opts) = {
            let mut st = inner.state.lock().unwrap();
            loop {
                if let Some(next) = st.pending.pop_front() {
                    st.running = true;
                    break next;
                }
                st = inner.wake.wait(st).unwrap();
            }
        };
        let id = job.job_id.clone();
        update(inner, &id, |r| {
            r.status = JobStatus::Running;
            r.started_at = Some(now_ms());
        });
        let every = (opts.iterations / LOSS_SAMPLES).max(1);
        let result = inner.store.get(Some(&job.base_checkpoint)).and_then(|(_, base)| {
            let mut progress = |l: &StepLog| {
                update(inner, &id, |r| {
                    r.iterations_done = l.iter;
                    if l.iter % every == 0 || l.iter == opts.iterations {
                        r.losses.push(LossSample {
                            iter: l.iter,
                            gen_total: l.gen_total,
                            disc_total: l.disc_total,
                        });
                    }
                });
                Ok(())
            };
            let net = job.run(&base, &opts, &mut progress)?;
            let name = format!("ft-{id}");
            inner.store.add(&name, net, true)?;
            Ok(name)
        });
        if let Err(e) = &result {
            log::error!("finetune {id} failed: {} {}", e.message, e.detail.as_deref().unwrap_or(""));
        }
        {
            let mut st = inner.state.lock().unwrap();
            if let Some(r) = st.records.get_mut(&id) {
                r.finished_at = Some(now_ms());
                match result {
                    Ok(name) => {
                        r.status = JobStatus::Done;
                        r.result_checkpoint = Some(name);
                    }
                    Err(e) => {
                        r.status = JobStatus::Failed;
                        r.error = Some(match e.detail {
                            Some(d) => format!("{}: {d}", e.message),
                            None => e.message,
                        });
                    }
                }
            }
            st.running = false;
        }
    }
}
