//! Trajectory persistence in the RoboSet-lite container, dataset manifests
//! and replay verification.

mod container;
mod manifest;
mod replay;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use container::{write_trajectories, ContainerReader, FORMAT_VERSION, MAGIC};
pub use manifest::{build_manifest, DatasetManifest, ManifestRow, World};
pub use replay::{replay_container, replay_trajectory, HistogramBin, ReplayReport, ReplaySummary};

use crate::config::{ConfigError, EnvConfig};
use crate::envs::{Env, EnvError, Observation, StepResult};
use crate::robot::RobotCommand;
use crate::sim::SimState;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a RoboSet-lite file")]
    NotRoboSet,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("corrupt container: {0}")]
    Corrupt(String),
    #[error("config digest mismatch")]
    DigestMismatch,
    #[error("trajectory from '{got}' cannot be stored with '{expected}'")]
    MixedEnv { expected: String, got: String },
    #[error("invalid trajectory: {0}")]
    Invalid(String),
    #[error("embedded config: {0}")]
    Config(#[from] ConfigError),
    #[error("replay: {0}")]
    Replay(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Where a trajectory came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    ExpertPolicy,
    HumanTeleop,
    Scripted,
    Random,
}

impl Source {
    pub fn code(self) -> u8 {
        match self {
            Source::ExpertPolicy => 0,
            Source::HumanTeleop => 1,
            Source::Scripted => 2,
            Source::Random => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Source::ExpertPolicy,
            1 => Source::HumanTeleop,
            2 => Source::Scripted,
            3 => Source::Random,
            _ => return None,
        })
    }

    /// Label used in manifests.
    pub fn label(self) -> &'static str {
        match self {
            Source::ExpertPolicy => "Expert Policy",
            Source::HumanTeleop => "Human TeleOp",
            Source::Scripted => "Scripted",
            Source::Random => "Random",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A time-indexed table of fixed-width rows, stored row-major in memory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Series {
    pub fn new(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Result<Self, DatasetError> {
        let mut s = Self::new(dim);
        for r in rows {
            s.push(r)?;
        }
        Ok(s)
    }

    pub fn push(&mut self, row: &[f64]) -> Result<(), DatasetError> {
        if row.len() != self.dim {
            return Err(DatasetError::Invalid(format!("row of {} values in a series of width {}", row.len(), self.dim)));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }
}

/// One episode's record. `observations[t]` is what the agent saw before
/// `actions[t]`; `states[t]` is the simulator state vector after it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub env_id: String,
    pub seed: u64,
    pub observations: Vec<(String, Series)>,
    /// Joint values followed by the gripper code.
    pub actions: Series,
    pub rewards: Vec<f64>,
    pub successes: Vec<bool>,
    pub states: Series,
    pub initial_state: SimState,
    pub source: Source,
    pub metadata: BTreeMap<String, String>,
}

pub const META_CONFIG_DIGEST: &str = "config_digest";
pub const META_GOAL: &str = "goal";

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn observation(&self, name: &str) -> Option<&Series> {
        self.observations.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    /// Episode goal recorded in the metadata.
    pub fn goal(&self) -> Option<Vec<f64>> {
        let text = self.metadata.get(META_GOAL)?;
        if text.is_empty() {
            return Some(Vec::new());
        }
        text.split(',').map(|v| v.trim().parse().ok()).collect()
    }

    /// Whether the episode ended in success (last step).
    pub fn final_success(&self) -> bool {
        self.successes.last().copied().unwrap_or(false)
    }

    /// Checks that every time-indexed field has the same length.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let t = self.len();
        let check = |what: &str, n: usize| {
            if n == t {
                Ok(())
            } else {
                Err(DatasetError::Invalid(format!("{what} has {n} rows, expected {t}")))
            }
        };
        check("successes", self.successes.len())?;
        check("actions", self.actions.len())?;
        check("states", self.states.len())?;
        for (name, s) in &self.observations {
            check(&format!("observation '{name}'"), s.len())?;
        }
        for series in self.observations.iter().map(|(_, s)| s).chain([&self.actions, &self.states]) {
            if series.dim == 0 && !series.data.is_empty() {
                return Err(DatasetError::Invalid("zero-width series with data".into()));
            }
        }
        for (k, v) in &self.metadata {
            if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') {
                return Err(DatasetError::Invalid(format!("metadata entry {k:?} is not a key=value line")));
            }
        }
        Ok(())
    }
}

/// SHA-256 of the canonical serialized config with the base seed zeroed.
/// Trajectories carry their own episode seed and initial state, so
/// collections run under different base seeds share one digest.
pub fn config_digest(cfg: &EnvConfig) -> [u8; 32] {
    let mut c = cfg.clone();
    c.seed = 0;
    digest_bytes(c.to_config_string().as_bytes())
}

pub(crate) fn digest_bytes(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn format_vec(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Accumulates one episode of an [`Env`] into a [`Trajectory`].
pub struct TrajectoryBuilder {
    traj: Trajectory,
    pending_obs: Observation,
}

impl TrajectoryBuilder {
    /// Starts recording right after `env.reset*()` returned `obs`.
    pub fn begin(env: &Env, obs: Observation, source: Source) -> Result<Self, DatasetError> {
        let cfg = env.config();
        let initial_state = env
            .snapshot()
            .ok_or_else(|| DatasetError::Invalid("recording requires a backend with simulator state".into()))?;
        let mut metadata = BTreeMap::new();
        metadata.insert(META_CONFIG_DIGEST.to_owned(), hex(&config_digest(cfg)));
        metadata.insert(META_GOAL.to_owned(), format_vec(env.goal()));
        let observations = obs.readings.iter().map(|(n, v)| (n.clone(), Series::new(v.len()))).collect();
        let state_dim = initial_state.state_vector().len();
        let traj = Trajectory {
            env_id: cfg.env_id.clone(),
            seed: env.current_episode_seed(),
            observations,
            actions: Series::new(cfg.joint_count() + 1),
            rewards: Vec::new(),
            successes: Vec::new(),
            states: Series::new(state_dim),
            initial_state,
            source,
            metadata,
        };
        Ok(Self { traj, pending_obs: obs })
    }

    pub fn set_metadata(&mut self, key: &str, value: &str) {
        self.traj.metadata.insert(key.to_owned(), value.to_owned());
    }

    /// Records `action` (already applied to `env`) and its result.
    pub fn push(&mut self, env: &Env, action: &RobotCommand, result: &StepResult) -> Result<(), DatasetError> {
        for ((_, series), (_, v)) in self.traj.observations.iter_mut().zip(&self.pending_obs.readings) {
            series.push(v)?;
        }
        self.traj.actions.push(&action.to_row())?;
        self.traj.rewards.push(result.reward);
        self.traj.successes.push(result.success);
        let state = env
            .snapshot()
            .ok_or_else(|| DatasetError::Invalid("recording requires a backend with simulator state".into()))?;
        self.traj.states.push(&state.state_vector())?;
        self.pending_obs = result.obs.clone();
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.traj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traj.is_empty()
    }

    pub fn finish(self) -> Trajectory {
        self.traj
    }
}
