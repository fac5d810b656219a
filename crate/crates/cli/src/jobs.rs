//! Asynchronous t-SNE jobs.
//!
//! A job is identified by a hash of (node, sample, config), so resubmitting
//! the same request returns the same id: a running job is joined and a
//! finished one serves as the cache entry. At most one job per node runs at
//! a time; submitting a different request for a node cancels the running one.

use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use neuroscope_core::{ProjectionConfig, ProjectionError, ProjectionResult};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::ApiError;
use crate::format::num;

/// Optional overrides of [`ProjectionConfig`] as accepted over the API.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigRequest {
    pub perplexity: Option<f64>,
    pub iterations: Option<usize>,
    pub early_exaggeration: Option<f64>,
    pub exaggeration_iters: Option<usize>,
    pub learning_rate: Option<f64>,
    pub initial_momentum: Option<f64>,
    pub final_momentum: Option<f64>,
    pub momentum_switch_iter: Option<usize>,
    pub seed: Option<u64>,
}

impl ConfigRequest {
    /// Defaults with overrides applied. When `iterations` is shortened below
    /// the default phase lengths and those are not given, the phases shrink to fit.
    pub fn build(&self) -> Result<ProjectionConfig, ApiError> {
        let d = ProjectionConfig::default();
        let iterations = self.iterations.unwrap_or(d.iterations);
        let cfg = ProjectionConfig {
            perplexity: self.perplexity.unwrap_or(d.perplexity),
            iterations,
            early_exaggeration: self.early_exaggeration.unwrap_or(d.early_exaggeration),
            exaggeration_iters: self
                .exaggeration_iters
                .unwrap_or(d.exaggeration_iters.min(iterations)),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            initial_momentum: self.initial_momentum.unwrap_or(d.initial_momentum),
            final_momentum: self.final_momentum.unwrap_or(d.final_momentum),
            momentum_switch_iter: self
                .momentum_switch_iter
                .unwrap_or(d.momentum_switch_iter.min(iterations)),
            seed: self.seed.unwrap_or(d.seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn config_hash(cfg: &ProjectionConfig) -> u64 {
    let mut h = DefaultHasher::new();
    for f in [
        cfg.perplexity,
        cfg.early_exaggeration,
        cfg.learning_rate,
        cfg.initial_momentum,
        cfg.final_momentum,
    ] {
        f.to_bits().hash(&mut h);
    }
    (cfg.iterations, cfg.exaggeration_iters, cfg.momentum_switch_iter, cfg.seed).hash(&mut h);
    h.finish()
}

pub fn sample_hash(sample: &[usize]) -> u64 {
    let mut h = DefaultHasher::new();
    sample.hash(&mut h);
    h.finish()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JobKey {
    pub node: String,
    pub sample_hash: u64,
    pub config_hash: u64,
}

impl JobKey {
    pub fn job_id(&self) -> String {
        let mut h = DefaultHasher::new();
        self.hash(&mut h);
        format!("{:016x}", h.finish())
    }
}

#[derive(Debug, Clone)]
pub enum JobState {
    Running,
    Done(Arc<ProjectionResult>),
    Failed(ApiError),
    Cancelled,
}

impl JobState {
    pub fn name(&self) -> &'static str {
        match self {
            JobState::Running => "running",
            JobState::Done(_) => "done",
            JobState::Failed(_) => "failed",
            JobState::Cancelled => "cancelled",
        }
    }
}

#[derive(Debug)]
struct Job {
    key: JobKey,
    state: JobState,
    cancel: Arc<AtomicBool>,
}

/// What the caller must do after [`Jobs::submit`].
pub enum Submission {
    /// Already running or finished under this id.
    Existing(String),
    /// New job; run it and report through [`Jobs::finish`].
    Start { job_id: String, cancel: Arc<AtomicBool> },
}

#[derive(Debug, Default)]
pub struct Jobs {
    jobs: HashMap<String, Job>,
    running: HashMap<String, String>,
}

impl Jobs {
    pub fn submit(&mut self, key: JobKey) -> Submission {
        let id = key.job_id();
        if let Some(job) = self.jobs.get(&id) {
            if matches!(job.state, JobState::Running | JobState::Done(_)) {
                return Submission::Existing(id);
            }
        }
        if let Some(other) = self.running.remove(&key.node) {
            self.cancel(&other);
        }
        let cancel = Arc::new(AtomicBool::new(false));
        self.running.insert(key.node.clone(), id.clone());
        self.jobs.insert(
            id.clone(),
            Job {
                key,
                state: JobState::Running,
                cancel: Arc::clone(&cancel),
            },
        );
        Submission::Start { job_id: id, cancel }
    }

    /// Record a job's outcome unless it was cancelled or replaced meanwhile.
    pub fn finish(
        &mut self,
        job_id: &str,
        cancel: &Arc<AtomicBool>,
        outcome: Result<ProjectionResult, ProjectionError>,
    ) {
        let Some(job) = self.jobs.get_mut(job_id) else { return };
        if !Arc::ptr_eq(&job.cancel, cancel) || !matches!(job.state, JobState::Running) {
            return;
        }
        job.state = match outcome {
            Ok(r) => JobState::Done(Arc::new(r)),
            Err(ProjectionError::Cancelled) => JobState::Cancelled,
            Err(e) => JobState::Failed(e.into()),
        };
        if self.running.get(&job.key.node).is_some_and(|id| id == job_id) {
            self.running.remove(&job.key.node);
        }
    }

    /// Cancel a running job. Returns false for unknown ids.
    pub fn cancel(&mut self, job_id: &str) -> bool {
        let Some(job) = self.jobs.get_mut(job_id) else { return false };
        if matches!(job.state, JobState::Running) {
            job.cancel.store(true, Ordering::Relaxed);
            job.state = JobState::Cancelled;
            if self.running.get(&job.key.node).is_some_and(|id| id == job_id) {
                self.running.remove(&job.key.node);
            }
        }
        true
    }

    pub fn state(&self, job_id: &str) -> Option<&JobState> {
        self.jobs.get(job_id).map(|j| &j.state)
    }

    pub fn status_json(&self, job_id: &str) -> Result<Value, ApiError> {
        let job = self
            .jobs
            .get(job_id)
            .ok_or_else(|| ApiError::not_found("UnknownJob", format!("no projection job {job_id}")))?;
        let mut v = json!({
            "job_id": job_id,
            "node_id": job.key.node,
            "status": job.state.name(),
        });
        match &job.state {
            JobState::Done(r) => {
                v["point_ids"] = json!(r.point_ids);
                v["coords"] = coords_json(r);
                v["kl_final"] = r.kl_final().map_or(Value::Null, num);
            }
            JobState::Failed(e) => v["error"] = e.body(),
            JobState::Running | JobState::Cancelled => {}
        }
        Ok(v)
    }
}

pub fn coords_json(r: &ProjectionResult) -> Value {
    r.coords
        .chunks_exact(2)
        .map(|p| Value::Array(vec![num(p[0]), num(p[1])]))
        .collect()
}
