use std::collections::{BTreeMap, HashMap, VecDeque};
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::artifacts::{RunArtifacts, RunCache};
use crate::error::{Error, Result, Stage};
use crate::integrator::{load_model, model_to_bytes, IntegratorModel};
use crate::pipeline::{
    compose_observed, fallback_integrator, open_backbone, Backbone, BackboneKind, BackboneProfile, CompositionJob,
    RunObserver,
};
use crate::util::sha256_hex;

pub const WORKERS_ENV: &str = "XCOMPOSE_WORKERS";
pub const QUEUE_LIMIT_ENV: &str = "XCOMPOSE_QUEUE_LIMIT";
pub const DATA_DIR_ENV: &str = "XCOMPOSE_DATA_DIR";
pub const MODEL_ENV: &str = "XCOMPOSE_MODEL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }

    /// Allowed moves: queued to running, running to done or failed, and
    /// queued to failed when a queued job is cancelled.
    pub fn can_move_to(self, to: JobState) -> bool {
        matches!(
            (self, to),
            (JobState::Queued, JobState::Running)
                | (JobState::Queued, JobState::Failed)
                | (JobState::Running, JobState::Done)
                | (JobState::Running, JobState::Failed)
        )
    }
}

/// Scheduling class; each class is served FIFO, higher classes first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Priority {
    High,
    #[default]
    Normal,
    Low,
}

impl std::str::FromStr for Priority {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "high" => Ok(Priority::High),
            "normal" => Ok(Priority::Normal),
            "low" => Ok(Priority::Low),
            other => Err(Error::invalid(format!("unknown priority {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct JobProgress {
    pub stage: Option<Stage>,
    pub step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub state: JobState,
    pub priority: Priority,
    pub config_hash: String,
    pub progress: JobProgress,
    /// Set exactly when the job is done.
    pub result: Option<RunArtifacts>,
    /// Decoded initial blend; also kept for jobs that failed after blending.
    pub preview: Option<PathBuf>,
    pub error: Option<String>,
    /// Served from the run cache without touching the backbone.
    pub cached: bool,
}

impl JobRecord {
    fn move_to(&mut self, to: JobState) {
        assert!(self.state.can_move_to(to), "illegal job transition {:?} -> {:?}", self.state, to);
        self.state = to;
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SubmitError {
    #[error(transparent)]
    Invalid(Error),
    #[error("queue is full ({0} jobs waiting)")]
    QueueFull(usize),
    #[error("service is shutting down")]
    ShuttingDown,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CancelError {
    #[error("unknown job {0}")]
    NotFound(String),
    #[error("job {0} already finished")]
    AlreadyFinished(String),
}

/// Service settings, usually read from the environment.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub workers: usize,
    /// Maximum number of queued (not yet running) jobs.
    pub queue_limit: usize,
    pub data_dir: PathBuf,
    pub backbone: BackboneKind,
    pub backbone_seed: u64,
    /// Trained integrator; the zero-output fallback when `None`.
    pub model_path: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            workers: 1,
            queue_limit: 16,
            data_dir: PathBuf::from("xcompose-data"),
            backbone: BackboneKind::Toy,
            backbone_seed: 0,
            model_path: None,
        }
    }
}

impl ServiceConfig {
    /// Defaults overridden by `XCOMPOSE_WORKERS`, `XCOMPOSE_QUEUE_LIMIT`,
    /// `XCOMPOSE_DATA_DIR` and `XCOMPOSE_MODEL`.
    pub fn from_env() -> Result<Self> {
        let mut cfg = Self::default();
        let num = |name: &str| -> Result<Option<usize>> {
            match std::env::var(name) {
                Ok(v) => v
                    .trim()
                    .parse()
                    .map(Some)
                    .map_err(|_| Error::invalid(format!("{name}={v:?} is not a non-negative integer"))),
                Err(_) => Ok(None),
            }
        };
        if let Some(w) = num(WORKERS_ENV)? {
            cfg.workers = w;
        }
        if let Some(q) = num(QUEUE_LIMIT_ENV)? {
            cfg.queue_limit = q;
        }
        if let Some(d) = std::env::var_os(DATA_DIR_ENV).filter(|d| !d.is_empty()) {
            cfg.data_dir = d.into();
        }
        if let Some(m) = std::env::var_os(MODEL_ENV).filter(|d| !d.is_empty()) {
            cfg.model_path = Some(m.into());
        }
        Ok(cfg)
    }
}

/// Opens one backbone handle per worker.
pub type BackboneFactory = Arc<dyn Fn() -> Result<Box<dyn Backbone>> + Send + Sync>;

struct Entry {
    record: JobRecord,
    job: Option<CompositionJob>,
    force: bool,
    cancel: Arc<AtomicBool>,
}

#[derive(Default)]
struct Inner {
    jobs: HashMap<String, Entry>,
    queues: BTreeMap<Priority, VecDeque<String>>,
    shutdown: bool,
}

impl Inner {
    fn queued(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }

    fn pop(&mut self) -> Option<String> {
        self.queues.values_mut().find_map(VecDeque::pop_front)
    }
}

struct Shared {
    inner: Mutex<Inner>,
    work: Condvar,
    changed: Condvar,
    cache: RunCache,
    jobs_dir: PathBuf,
    model: Arc<IntegratorModel>,
    model_hash: String,
    profile: BackboneProfile,
    queue_limit: usize,
    next_id: AtomicU64,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut JobRecord)) {
        let mut inner = self.lock();
        if let Some(e) = inner.jobs.get_mut(id) {
            f(&mut e.record);
        }
        drop(inner);
        self.changed.notify_all();
    }
}

/// Job queue plus a bounded pool of backbone workers.
pub struct JobService {
    shared: Arc<Shared>,
    handles: Mutex<Vec<JoinHandle<()>>>,
    workers: usize,
}

struct WorkerObserver<'a> {
    shared: &'a Shared,
    id: &'a str,
    cancel: &'a AtomicBool,
}

impl RunObserver for WorkerObserver<'_> {
    fn progress(&mut self, stage: Stage, step: Option<usize>) {
        self.shared.update(self.id, |r| r.progress = JobProgress { stage: Some(stage), step });
    }

    fn is_cancelled(&self) -> bool {
        self.cancel.load(Ordering::Relaxed)
    }
}

enum Outcome {
    Done { artifacts: RunArtifacts, cached: bool },
    Failed { error: String, preview: Option<PathBuf> },
}

fn run_job(shared: &Shared, backbone: &mut dyn Backbone, id: &str, job: &CompositionJob, hash: &str, force: bool, cancel: &AtomicBool) -> Outcome {
    if !force {
        if let Some(artifacts) = shared.cache.lookup(hash) {
            return Outcome::Done { artifacts, cached: true };
        }
    }
    let mut observer = WorkerObserver { shared, id, cancel };
    let result = std::panic::catch_unwind(AssertUnwindSafe(|| compose_observed(job, backbone, &shared.model, &mut observer)));
    match result {
        Ok(Ok(output)) => match shared.cache.store(hash, &output) {
            Ok(artifacts) => Outcome::Done { artifacts, cached: false },
            Err(e) => Outcome::Failed {
                error: format!("storing artifacts: {e}"),
                preview: None,
            },
        },
        Ok(Err(e)) => {
            let preview = match &e {
                Error::Stage { preview: Some(img), .. } => {
                    let p = shared.jobs_dir.join(id).join("preview.png");
                    std::fs::create_dir_all(shared.jobs_dir.join(id))
                        .ok()
                        .and_then(|_| img.save(&p).ok())
                        .map(|_| p)
                }
                _ => None,
            };
            let error = if matches!(e, Error::Cancelled) { "cancelled".to_string() } else { e.to_string() };
            Outcome::Failed { error, preview }
        }
        Err(_) => Outcome::Failed {
            error: "worker panicked while composing".into(),
            preview: None,
        },
    }
}

fn worker_loop(shared: Arc<Shared>, mut backbone: Box<dyn Backbone>) {
    loop {
        let mut inner = shared.lock();
        let id = loop {
            if inner.shutdown {
                return;
            }
            if let Some(id) = inner.pop() {
                break id;
            }
            inner = shared.work.wait(inner).unwrap_or_else(|e| e.into_inner());
        };
        let Some(entry) = inner.jobs.get_mut(&id) else { continue };
        let Some(job) = entry.job.take() else { continue };
        entry.record.move_to(JobState::Running);
        let (hash, force, cancel) = (entry.record.config_hash.clone(), entry.force, entry.cancel.clone());
        drop(inner);
        shared.changed.notify_all();
        log::info!("job {id} running");

        let outcome = run_job(&shared, backbone.as_mut(), &id, &job, &hash, force, &cancel);
        shared.update(&id, |r| match outcome {
            Outcome::Done { artifacts, cached } => {
                r.move_to(JobState::Done);
                r.preview = Some(artifacts.preview.clone());
                r.result = Some(artifacts);
                r.cached = cached;
                log::info!("job {id} done{}", if cached { " (cached)" } else { "" });
            }
            Outcome::Failed { error, preview } => {
                r.move_to(JobState::Failed);
                log::warn!("job {id} failed: {error}");
                r.error = Some(error);
                r.preview = preview;
            }
        });
    }
}

impl JobService {
    /// Opens backbones and the integrator described by `cfg` and starts the
    /// workers.
    pub fn start(cfg: &ServiceConfig) -> Result<Self> {
        let model = match &cfg.model_path {
            Some(p) => load_model(p)?,
            None => fallback_integrator(&cfg.backbone.profile())?,
        };
        let (kind, seed) = (cfg.backbone, cfg.backbone_seed);
        Self::start_with(cfg, model, Arc::new(move || open_backbone(kind, seed)))
    }

    /// Like [`JobService::start`] with an explicit integrator and backbone
    /// factory. All backbones are opened before this returns.
    pub fn start_with(cfg: &ServiceConfig, model: IntegratorModel, factory: BackboneFactory) -> Result<Self> {
        if cfg.workers == 0 {
            return Err(Error::invalid("the service needs at least one worker"));
        }
        let backbones = (0..cfg.workers).map(|_| factory()).collect::<Result<Vec<_>>>()?;
        let profile = backbones[0].profile().clone();
        let shared = Arc::new(Shared {
            inner: Mutex::new(Inner::default()),
            work: Condvar::new(),
            changed: Condvar::new(),
            cache: RunCache::new(cfg.data_dir.join("runs")),
            jobs_dir: cfg.data_dir.join("jobs"),
            model_hash: sha256_hex(&model_to_bytes(&model)?),
            model: Arc::new(model),
            profile,
            queue_limit: cfg.queue_limit,
            next_id: AtomicU64::new(1),
        });
        let handles = backbones
            .into_iter()
            .enumerate()
            .map(|(i, b)| {
                let s = shared.clone();
                std::thread::Builder::new()
                    .name(format!("xcompose-worker-{i}"))
                    .spawn(move || worker_loop(s, b))
                    .map_err(Error::from)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            shared,
            handles: Mutex::new(handles),
            workers: cfg.workers,
        })
    }

    pub fn profile(&self) -> &BackboneProfile {
        &self.shared.profile
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn queue_limit(&self) -> usize {
        self.shared.queue_limit
    }

    pub fn data_dir_runs(&self) -> &Path {
        self.shared.cache.root()
    }

    /// Config hash the job would be stored under.
    pub fn config_hash(&self, job: &CompositionJob) -> Result<String> {
        job.config_hash_with(&self.shared.profile, &self.shared.model_hash)
    }

    pub fn submit(&self, job: CompositionJob, priority: Priority, force: bool) -> Result<JobRecord, SubmitError> {
        job.validate().map_err(SubmitError::Invalid)?;
        let hash = self.config_hash(&job).map_err(SubmitError::Invalid)?;
        let n = self.shared.next_id.fetch_add(1, Ordering::Relaxed);
        let job_id = format!("{n:06}-{}", &hash[..12]);
        let record = JobRecord {
            job_id: job_id.clone(),
            state: JobState::Queued,
            priority,
            config_hash: hash,
            progress: JobProgress::default(),
            result: None,
            preview: None,
            error: None,
            cached: false,
        };
        let mut inner = self.shared.lock();
        if inner.shutdown {
            return Err(SubmitError::ShuttingDown);
        }
        let queued = inner.queued();
        if queued >= self.shared.queue_limit {
            return Err(SubmitError::QueueFull(queued));
        }
        inner.jobs.insert(
            job_id.clone(),
            Entry {
                record: record.clone(),
                job: Some(job),
                force,
                cancel: Arc::new(AtomicBool::new(false)),
            },
        );
        inner.queues.entry(priority).or_default().push_back(job_id);
        drop(inner);
        self.shared.work.notify_one();
        self.shared.changed.notify_all();
        Ok(record)
    }

    pub fn get(&self, id: &str) -> Option<JobRecord> {
        self.shared.lock().jobs.get(id).map(|e| e.record.clone())
    }

    /// All jobs in submission order.
    pub fn list(&self) -> Vec<JobRecord> {
        let mut v: Vec<_> = self.shared.lock().jobs.values().map(|e| e.record.clone()).collect();
        v.sort_by(|a, b| a.job_id.cmp(&b.job_id));
        v
    }

    /// Queued jobs fail immediately with `"cancelled"` and never reach a
    /// backbone; running jobs stop at the next step boundary.
    pub fn cancel(&self, id: &str) -> Result<JobRecord, CancelError> {
        let mut inner = self.shared.lock();
        let entry = inner.jobs.get_mut(id).ok_or_else(|| CancelError::NotFound(id.into()))?;
        let record = match entry.record.state {
            JobState::Done | JobState::Failed => return Err(CancelError::AlreadyFinished(id.into())),
            JobState::Running => {
                entry.cancel.store(true, Ordering::Relaxed);
                entry.record.clone()
            }
            JobState::Queued => {
                entry.job = None;
                entry.record.move_to(JobState::Failed);
                entry.record.error = Some("cancelled".into());
                let (record, priority) = (entry.record.clone(), entry.record.priority);
                if let Some(q) = inner.queues.get_mut(&priority) {
                    q.retain(|j| j != id);
                }
                record
            }
        };
        drop(inner);
        self.shared.changed.notify_all();
        Ok(record)
    }

    /// Blocks until `pred` holds for the job or `timeout` passes; returns the
    /// last observed record.
    pub fn wait_until(&self, id: &str, timeout: Duration, pred: impl Fn(&JobRecord) -> bool) -> Option<JobRecord> {
        let deadline = Instant::now() + timeout;
        let mut inner = self.shared.lock();
        loop {
            let rec = inner.jobs.get(id)?.record.clone();
            let now = Instant::now();
            if pred(&rec) || now >= deadline {
                return Some(rec);
            }
            inner = self
                .shared
                .changed
                .wait_timeout(inner, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    /// Waits for a terminal state.
    pub fn wait(&self, id: &str, timeout: Duration) -> Option<JobRecord> {
        self.wait_until(id, timeout, |r| r.state.is_terminal())
    }

    /// Stops accepting jobs, cancels running ones and joins the workers.
    pub fn shutdown(&self) {
        let mut inner = self.shared.lock();
        inner.shutdown = true;
        for e in inner.jobs.values() {
            if e.record.state == JobState::Running {
                e.cancel.store(true, Ordering::Relaxed);
            }
        }
        drop(inner);
        self.shared.work.notify_all();
        let handles = std::mem::take(&mut *self.handles.lock().unwrap_or_else(|e| e.into_inner()));
        for h in handles {
            let _ = h.join();
        }
    }
}

impl Drop for JobService {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transitions() {
        use JobState::*;
        assert!(Queued.can_move_to(Running));
        assert!(Running.can_move_to(Done));
        assert!(Running.can_move_to(Failed));
        assert!(!Done.can_move_to(Running));
        assert!(!Queued.can_move_to(Done));
        assert!(!Failed.can_move_to(Queued));
    }

    #[test]
    fn priority_order() {
        let mut inner = Inner::default();
        inner.queues.entry(Priority::Low).or_default().push_back("l".into());
        inner.queues.entry(Priority::Normal).or_default().push_back("n1".into());
        inner.queues.entry(Priority::Normal).or_default().push_back("n2".into());
        inner.queues.entry(Priority::High).or_default().push_back("h".into());
        let order: Vec<_> = std::iter::from_fn(|| inner.pop()).collect();
        assert_eq!(order, ["h", "n1", "n2", "l"]);
    }
}
