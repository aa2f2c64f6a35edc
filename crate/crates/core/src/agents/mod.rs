//! Policies that close the loop: random, scripted experts per task and a
//! ridge behavior-cloning baseline, plus success-rate evaluation.

mod bc;
mod expert;

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bc::{load_bc_model, save_bc_model, train_bc, train_bc_from, BcPolicy, LinearBCModel};
pub use expert::{dls_ik_step, scripted_expert, ScriptedExpert, IK_DAMPING, IK_MAX_STEP};

use crate::config::{ControlMode, EnvConfig, SensorKind};
use crate::dataset::{DatasetError, Source, Trajectory, TrajectoryBuilder};
use crate::envs::{Env, EnvError, Observation};
use crate::linalg::LinalgError;
use crate::rng::{streams, CounterRng};
use crate::robot::{Gripper, RobotCommand};
use crate::JSON_SCHEMA_VERSION;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("observation is missing '{0}'")]
    MissingObservation(String),
    #[error("empty evaluation")]
    EmptyEvaluation,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("not a BC model file")]
    NotAModel,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDescriptor {
    pub kind: String,
    pub env_id: String,
    pub obs_keys: Vec<String>,
}

/// Maps observations to commands. Deterministic given `(obs, rng)`.
pub trait Policy: Send + Sync {
    fn act(&self, obs: &Observation, rng: &mut CounterRng) -> Result<RobotCommand, AgentError>;
    fn descriptor(&self) -> PolicyDescriptor;
}

/// Uniform samples over the command space: joint-limit box for position
/// mode, `[-1, 1]` rad/s for velocity mode and the torque limits for torque
/// mode. The gripper is never actuated.
pub struct RandomPolicy {
    env_id: String,
    mode: ControlMode,
    bounds: Vec<(f64, f64)>,
}

pub const RANDOM_VELOCITY_BOUND: f64 = 1.0;

impl RandomPolicy {
    pub fn new(cfg: &EnvConfig) -> Self {
        let m = &cfg.robot;
        let bounds = match cfg.control_mode {
            ControlMode::Position => m.joint_limits.clone(),
            ControlMode::Velocity => vec![(-RANDOM_VELOCITY_BOUND, RANDOM_VELOCITY_BOUND); m.joint_count()],
            ControlMode::Torque => m.torque_limits.iter().map(|&t| (-t, t)).collect(),
        };
        Self { env_id: cfg.env_id.clone(), mode: cfg.control_mode, bounds }
    }
}

impl Policy for RandomPolicy {
    fn act(&self, _obs: &Observation, rng: &mut CounterRng) -> Result<RobotCommand, AgentError> {
        let values = self.bounds.iter().map(|&(lo, hi)| rng.uniform_range(lo, hi)).collect();
        Ok(RobotCommand::new(self.mode, values))
    }

    fn descriptor(&self) -> PolicyDescriptor {
        PolicyDescriptor { kind: "random".into(), env_id: self.env_id.clone(), obs_keys: Vec::new() }
    }
}

/// A policy by name, instantiated per environment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyRef {
    Random,
    Expert,
    Bc(PathBuf),
}

impl PolicyRef {
    /// `random`, `expert`, or `bc:<model path>`.
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "random" => Some(Self::Random),
            "expert" => Some(Self::Expert),
            _ => s.strip_prefix("bc:").filter(|p| !p.is_empty()).map(|p| Self::Bc(PathBuf::from(p))),
        }
    }

    pub fn instantiate(&self, cfg: &EnvConfig) -> Result<Arc<dyn Policy>, AgentError> {
        Ok(match self {
            Self::Random => Arc::new(RandomPolicy::new(cfg)),
            Self::Expert => Arc::new(scripted_expert(cfg)?),
            Self::Bc(path) => Arc::new(BcPolicy::new(load_bc_model(path)?, cfg)?),
        })
    }

    /// Source label for trajectories this policy produces.
    pub fn source(&self) -> Source {
        match self {
            Self::Random => Source::Random,
            Self::Expert => Source::ExpertPolicy,
            Self::Bc(_) => Source::Scripted,
        }
    }
}

impl fmt::Display for PolicyRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Random => f.write_str("random"),
            Self::Expert => f.write_str("expert"),
            Self::Bc(p) => write!(f, "bc:{}", p.display()),
        }
    }
}

/// RNG a policy uses during the episode with the given seed.
pub fn policy_rng(episode_seed: u64) -> CounterRng {
    CounterRng::new(episode_seed, streams::POLICY)
}

/// Outcome of one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub index: u64,
    pub seed: u64,
    pub steps: u32,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub success: bool,
}

/// Runs episode `index` to completion, optionally recording it.
pub fn run_episode(
    env: &mut Env,
    policy: &dyn Policy,
    index: u64,
    record: Option<Source>,
) -> Result<(EpisodeRow, Option<Trajectory>), AgentError> {
    let mut obs = env.reset_episode(index)?;
    let seed = env.current_episode_seed();
    let mut rng = policy_rng(seed);
    let mut builder = match record {
        Some(source) => Some(TrajectoryBuilder::begin(env, obs.clone(), source)?),
        None => None,
    };
    let mut ret = 0.0;
    let success = loop {
        let action = policy.act(&obs, &mut rng)?;
        let result = env.step(&action)?;
        if let Some(b) = builder.as_mut() {
            b.push(env, &action, &result)?;
        }
        ret += result.reward;
        if result.done {
            break result.success;
        }
        obs = result.obs;
    };
    let row = EpisodeRow { index, seed, steps: env.steps(), episode_return: ret, success };
    Ok((row, builder.map(TrajectoryBuilder::finish)))
}

/// Records `n` episodes starting at episode index `first`.
pub fn collect_trajectories(
    env: &mut Env,
    policy: &dyn Policy,
    first: u64,
    n: usize,
    source: Source,
) -> Result<Vec<Trajectory>, AgentError> {
    (first..first + n as u64)
        .map(|i| run_episode(env, policy, i, Some(source)).map(|(_, t)| t.expect("recording requested")))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub env_id: String,
    pub policy: PolicyDescriptor,
    pub base_seed: u64,
    pub n_episodes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    pub episodes: Vec<EpisodeRow>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Evaluates on episodes `0..n_episodes` of an environment seeded with `seed`.
pub fn evaluate_policy(policy: &dyn Policy, cfg: &EnvConfig, n_episodes: usize, seed: u64) -> Result<EvalReport, AgentError> {
    let mut cfg = cfg.clone();
    cfg.seed = seed;
    let mut env = Env::new(Arc::new(cfg))?;
    evaluate_in_env(policy, &mut env, n_episodes)
}

/// Evaluates on episodes `0..n_episodes` of an already-built environment
/// (which may carry a custom reward function). The success rate counts
/// episodes whose final step reports success.
pub fn evaluate_in_env(policy: &dyn Policy, env: &mut Env, n_episodes: usize) -> Result<EvalReport, AgentError> {
    if n_episodes == 0 {
        return Err(AgentError::EmptyEvaluation);
    }
    let episodes = (0..n_episodes as u64)
        .map(|i| run_episode(env, policy, i, None).map(|(row, _)| row))
        .collect::<Result<Vec<_>, _>>()?;
    let n = episodes.len() as f64;
    let successes = episodes.iter().filter(|e| e.success).count();
    Ok(EvalReport {
        schema_version: JSON_SCHEMA_VERSION,
        env_id: env.config().env_id.clone(),
        policy: policy.descriptor(),
        base_seed: env.config().seed,
        n_episodes: episodes.len(),
        success_rate: successes as f64 / n,
        mean_return: episodes.iter().map(|e| e.episode_return).sum::<f64>() / n,
        episodes,
    })
}

/// Names of the state (non-camera) sensors, in declaration order.
pub fn state_sensor_keys(cfg: &EnvConfig) -> Vec<String> {
    cfg.sensors
        .iter()
        .filter(|s| s.kind != SensorKind::GridCamera)
        .map(|s| s.name.clone())
        .collect()
}

fn obs_get<'a>(obs: &'a Observation, key: &str) -> Result<&'a [f64], AgentError> {
    obs.get(key).ok_or_else(|| AgentError::MissingObservation(key.to_owned()))
}

fn nearest_gripper(code: f64) -> Gripper {
    match code.round() {
        c if c >= 2.0 => Gripper::Release,
        c if c >= 1.0 => Gripper::Grasp,
        _ => Gripper::NoChange,
    }
}
