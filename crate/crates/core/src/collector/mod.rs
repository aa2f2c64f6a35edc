//! Rollout collection: workers that each own one environment, delivering
//! batches first-ready-first-served over a bounded channel, plus the
//! throughput benchmark.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, SyncSender};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{policy_rng, AgentError, Policy, PolicyRef};
use crate::config::{visual_variant, EnvConfig};
use crate::dataset::{DatasetError, Series, Trajectory, TrajectoryBuilder};
use crate::envs::{Env, EnvError};
use crate::registry::{EnvRegistry, RegistryError};
use crate::rng::CounterRng;
use crate::JSON_SCHEMA_VERSION;

#[derive(Debug, Error)]
pub enum CollectorError {
    #[error("invalid collector config: {0}")]
    Config(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("worker {worker} failed: {message}")]
    WorkerFailed { worker: usize, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectorConfig {
    pub env_id: String,
    pub n_workers: usize,
    /// Steps per delivered batch.
    pub batch_size: usize,
    pub total_steps: u64,
    pub policy: PolicyRef,
    /// One base seed per worker; worker `i` runs an environment seeded `seeds[i]`.
    pub seeds: Vec<u64>,
    /// Bounded queue length in batches (default `2 · n_workers`).
    pub queue_capacity: Option<usize>,
    /// Attach every episode completed within a batch as a [`Trajectory`].
    pub record_trajectories: bool,
}

impl CollectorConfig {
    /// Config with worker seeds `base_seed, base_seed + 1, ...`.
    pub fn new(env_id: &str, n_workers: usize, batch_size: usize, total_steps: u64, policy: PolicyRef, base_seed: u64) -> Self {
        Self {
            env_id: env_id.to_owned(),
            n_workers,
            batch_size,
            total_steps,
            policy,
            seeds: (0..n_workers as u64).map(|i| base_seed.wrapping_add(i)).collect(),
            queue_capacity: None,
            record_trajectories: false,
        }
    }

    pub fn validate(&self) -> Result<(), CollectorError> {
        let err = |m: &str| Err(CollectorError::Config(m.to_owned()));
        if self.n_workers == 0 {
            return err("n_workers must be positive");
        }
        if self.batch_size == 0 {
            return err("batch_size must be positive");
        }
        if self.total_steps < self.batch_size as u64 {
            return err("total_steps must be at least batch_size");
        }
        if self.seeds.len() != self.n_workers {
            return err("need exactly one seed per worker");
        }
        if self.queue_capacity == Some(0) {
            return err("queue_capacity must be positive");
        }
        Ok(())
    }

    pub fn queue_len(&self) -> usize {
        self.queue_capacity.unwrap_or(2 * self.n_workers)
    }
}

/// Contiguous step arrays from one worker.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    pub worker_id: usize,
    /// Per-worker batch counter, starting at 0.
    pub batch_seq: u64,
    /// Observation the policy acted on, per sensor.
    pub observations: Vec<(String, Series)>,
    /// Joint values followed by the gripper code.
    pub actions: Series,
    pub rewards: Vec<f64>,
    pub successes: Vec<bool>,
    pub dones: Vec<bool>,
    /// Indices where `done` is true.
    pub episode_ends: Vec<usize>,
    /// Set on the batch that exhausted the step budget with fewer than
    /// `batch_size` steps.
    pub partial: bool,
    pub trajectories: Vec<Trajectory>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectionReport {
    pub schema_version: u32,
    pub env_id: String,
    pub n_workers: usize,
    pub steps_delivered: u64,
    pub batches_delivered: u64,
    pub episodes_completed: u64,
    pub wall_time_s: f64,
    pub steps_per_sec: f64,
    /// Steps delivered from each worker.
    pub per_worker_steps: Vec<u64>,
}

enum Msg {
    Batch(RolloutBatch),
    Failed { worker: usize, message: String },
}

/// Hands out step quotas so the workers produce exactly `total_steps`.
struct Budget {
    remaining: AtomicU64,
    abort: AtomicBool,
}

impl Budget {
    fn new(total: u64) -> Self {
        Self { remaining: AtomicU64::new(total), abort: AtomicBool::new(false) }
    }

    fn claim(&self, want: usize) -> usize {
        if self.abort.load(Ordering::Relaxed) {
            return 0;
        }
        let mut got = 0;
        let _ = self.remaining.fetch_update(Ordering::AcqRel, Ordering::Acquire, |r| {
            got = r.min(want as u64);
            Some(r - got)
        });
        got as usize
    }
}

struct Worker<'a> {
    id: usize,
    env: Env,
    policy: &'a dyn Policy,
    record: Option<crate::dataset::Source>,
    obs: Option<crate::envs::Observation>,
    rng: CounterRng,
    builder: Option<TrajectoryBuilder>,
    seq: u64,
}

impl<'a> Worker<'a> {
    fn new(id: usize, cfg: &EnvConfig, seed: u64, policy: &'a dyn Policy, record: Option<crate::dataset::Source>) -> Result<Self, String> {
        let mut cfg = cfg.clone();
        cfg.seed = seed;
        let env = Env::new(std::sync::Arc::new(cfg)).map_err(|e| e.to_string())?;
        Ok(Self { id, env, policy, record, obs: None, rng: CounterRng::new(0, 0), builder: None, seq: 0 })
    }

    fn start_episode(&mut self) -> Result<(), String> {
        let obs = self.env.reset().map_err(|e| e.to_string())?;
        self.rng = policy_rng(self.env.current_episode_seed());
        if let Some(source) = self.record {
            self.builder = Some(TrajectoryBuilder::begin(&self.env, obs.clone(), source).map_err(|e| e.to_string())?);
        }
        self.obs = Some(obs);
        Ok(())
    }

    fn batch(&mut self, n: usize, batch_size: usize) -> Result<RolloutBatch, String> {
        let fail = |e: &dyn std::fmt::Display| e.to_string();
        if self.obs.is_none() {
            self.start_episode()?;
        }
        let first = self.obs.as_ref().expect("episode started");
        let mut observations: Vec<(String, Series)> =
            first.readings.iter().map(|(k, v)| (k.clone(), Series { dim: v.len(), data: Vec::with_capacity(n * v.len()) })).collect();
        let mut actions = Series::new(self.env.config().joint_count() + 1);
        let mut batch = RolloutBatch {
            worker_id: self.id,
            batch_seq: self.seq,
            observations: Vec::new(),
            actions: Series::new(0),
            rewards: Vec::with_capacity(n),
            successes: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            episode_ends: Vec::new(),
            partial: n < batch_size,
            trajectories: Vec::new(),
        };
        self.seq += 1;
        for t in 0..n {
            if self.obs.is_none() {
                self.start_episode()?;
            }
            let obs = self.obs.take().expect("episode active");
            for ((_, s), (_, v)) in observations.iter_mut().zip(&obs.readings) {
                s.data.extend_from_slice(v);
            }
            let action = self.policy.act(&obs, &mut self.rng).map_err(|e| fail(&e))?;
            let result = self.env.step(&action).map_err(|e: EnvError| fail(&e))?;
            actions.data.extend_from_slice(&action.values);
            actions.data.push(f64::from(action.gripper.code()));
            if let Some(b) = self.builder.as_mut() {
                b.push(&self.env, &action, &result).map_err(|e: DatasetError| fail(&e))?;
            }
            batch.rewards.push(result.reward);
            batch.successes.push(result.success);
            batch.dones.push(result.done);
            if result.done {
                batch.episode_ends.push(t);
                if let Some(b) = self.builder.take() {
                    batch.trajectories.push(b.finish());
                }
            } else {
                self.obs = Some(result.obs);
            }
        }
        batch.observations = observations;
        batch.actions = actions;
        Ok(batch)
    }
}

fn run_worker(worker: &mut Worker<'_>, budget: &Budget, batch_size: usize, mut emit: impl FnMut(RolloutBatch) -> bool) -> Result<(), String> {
    loop {
        let n = budget.claim(batch_size);
        if n == 0 {
            return Ok(());
        }
        let batch = worker.batch(n, batch_size)?;
        if !emit(batch) {
            return Ok(());
        }
    }
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| (*s).to_owned())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".to_owned())
}

struct Tally {
    start: Instant,
    per_worker: Vec<u64>,
    batches: u64,
    episodes: u64,
}

impl Tally {
    fn new(n: usize) -> Self {
        Self { start: Instant::now(), per_worker: vec![0; n], batches: 0, episodes: 0 }
    }

    fn count(&mut self, b: &RolloutBatch) {
        self.per_worker[b.worker_id] += b.len() as u64;
        self.batches += 1;
        self.episodes += b.episode_ends.len() as u64;
    }

    fn report(self, cfg: &CollectorConfig) -> CollectionReport {
        let wall = self.start.elapsed().as_secs_f64();
        let steps: u64 = self.per_worker.iter().sum();
        CollectionReport {
            schema_version: JSON_SCHEMA_VERSION,
            env_id: cfg.env_id.clone(),
            n_workers: cfg.n_workers,
            steps_delivered: steps,
            batches_delivered: self.batches,
            episodes_completed: self.episodes,
            wall_time_s: wall,
            steps_per_sec: if wall > 0.0 { steps as f64 / wall } else { 0.0 },
            per_worker_steps: self.per_worker,
        }
    }
}

fn prepare(registry: &EnvRegistry, cfg: &CollectorConfig) -> Result<(EnvConfig, std::sync::Arc<dyn Policy>), CollectorError> {
    cfg.validate()?;
    let env_cfg = (*registry.config(&cfg.env_id)?).clone();
    let policy = cfg.policy.instantiate(&env_cfg)?;
    Ok((env_cfg, policy))
}

/// Runs `n_workers` threads and forwards their batches to `sink` in the
/// order they complete. Workers block while the queue is full. Delivers
/// exactly `total_steps` steps unless a worker fails.
pub fn collect_async(
    registry: &EnvRegistry,
    cfg: &CollectorConfig,
    mut sink: impl FnMut(RolloutBatch),
) -> Result<CollectionReport, CollectorError> {
    let (env_cfg, policy) = prepare(registry, cfg)?;
    let budget = Budget::new(cfg.total_steps);
    let record = cfg.record_trajectories.then(|| cfg.policy.source());
    let mut tally = Tally::new(cfg.n_workers);
    let mut failure = None;
    std::thread::scope(|scope| {
        let (tx, rx) = sync_channel::<Msg>(cfg.queue_len());
        for (id, &seed) in cfg.seeds.iter().enumerate() {
            let tx: SyncSender<Msg> = tx.clone();
            let (budget, env_cfg, policy) = (&budget, &env_cfg, policy.as_ref());
            scope.spawn(move || {
                let outcome = catch_unwind(AssertUnwindSafe(|| {
                    let mut w = Worker::new(id, env_cfg, seed, policy, record)?;
                    run_worker(&mut w, budget, cfg.batch_size, |b| tx.send(Msg::Batch(b)).is_ok())
                }));
                let message = match outcome {
                    Ok(Ok(())) => return,
                    Ok(Err(e)) => e,
                    Err(p) => panic_message(p),
                };
                budget.abort.store(true, Ordering::Relaxed);
                let _ = tx.send(Msg::Failed { worker: id, message });
            });
        }
        drop(tx);
        for msg in rx {
            match msg {
                Msg::Batch(b) if failure.is_none() => {
                    tally.count(&b);
                    sink(b);
                }
                Msg::Batch(_) => {}
                Msg::Failed { worker, message } => {
                    failure.get_or_insert(CollectorError::WorkerFailed { worker, message });
                }
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(tally.report(cfg)),
    }
}

/// Single-threaded collection: worker 0 runs until the budget is spent, then
/// worker 1, and so on, delivering batches in production order.
pub fn collect_sequential(
    registry: &EnvRegistry,
    cfg: &CollectorConfig,
    mut sink: impl FnMut(RolloutBatch),
) -> Result<CollectionReport, CollectorError> {
    let (env_cfg, policy) = prepare(registry, cfg)?;
    let budget = Budget::new(cfg.total_steps);
    let record = cfg.record_trajectories.then(|| cfg.policy.source());
    let mut tally = Tally::new(cfg.n_workers);
    for (id, &seed) in cfg.seeds.iter().enumerate() {
        let fail = |message| CollectorError::WorkerFailed { worker: id, message };
        let mut w = Worker::new(id, &env_cfg, seed, policy.as_ref(), record).map_err(fail)?;
        run_worker(&mut w, &budget, cfg.batch_size, |b| {
            tally.count(&b);
            sink(b);
            true
        })
        .map_err(fail)?;
    }
    Ok(tally.report(cfg))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsMode {
    State,
    Visual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub schema_version: u32,
    /// The environment actually stepped (the visual variant in visual mode).
    pub env_id: String,
    pub n_workers: usize,
    pub obs_mode: ObsMode,
    pub seeds: Vec<u64>,
    pub total_steps: u64,
    pub steps_per_sec_mean: f64,
    pub steps_per_sec_std: f64,
    pub runs_steps_per_sec: Vec<f64>,
    /// Per-worker delivered steps of each run.
    pub per_worker_steps: Vec<Vec<u64>>,
}

impl ThroughputReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub const BENCH_SEEDS: [u64; 3] = [0, 1, 2];
pub const BENCH_BATCH: usize = 500;

/// Random-policy throughput over three seeded runs. Visual mode steps the
/// `_v2d` variant, so camera rasterization is inside the measured loop.
pub fn benchmark_throughput(
    registry: &EnvRegistry,
    env_id: &str,
    n_workers: usize,
    total_steps: u64,
    obs_mode: ObsMode,
    seeds: &[u64],
) -> Result<ThroughputReport, CollectorError> {
    let id = match obs_mode {
        ObsMode::State => env_id.to_owned(),
        ObsMode::Visual => {
            visual_variant(env_id).ok_or_else(|| CollectorError::Config(format!("'{env_id}' has no visual variant id")))?
        }
    };
    registry.config(env_id)?;
    registry.config(&id)?;
    if seeds.is_empty() {
        return Err(CollectorError::Config("at least one seed is required".into()));
    }
    let batch = BENCH_BATCH.min(total_steps.max(1) as usize);
    let mut rates = Vec::with_capacity(seeds.len());
    let mut per_worker = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = CollectorConfig::new(&id, n_workers, batch, total_steps, PolicyRef::Random, seed.wrapping_mul(1 << 20));
        let report = collect_async(registry, &cfg, drop)?;
        rates.push(report.steps_per_sec);
        per_worker.push(report.per_worker_steps);
    }
    let n = rates.len() as f64;
    let mean = rates.iter().sum::<f64>() / n;
    let std = if rates.len() > 1 {
        (rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(ThroughputReport {
        schema_version: JSON_SCHEMA_VERSION,
        env_id: id,
        n_workers,
        obs_mode,
        seeds: seeds.to_vec(),
        total_steps,
        steps_per_sec_mean: mean,
        steps_per_sec_std: std,
        runs_steps_per_sec: rates,
        per_worker_steps: per_worker,
    })
}
