//! Task environments: a [`Robot`] plus a task, stepped through a gym-style
//! `reset`/`step` contract.

mod task;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use task::{compute_reward, compute_success, RewardInput};

use crate::config::{EnvConfig, TaskKind};
use crate::rng::{streams, CounterRng};
use crate::robot::{Robot, RobotCommand, RobotError, SensorFrame, WorldView};
use crate::sim::SimState;

/// Named observation dictionary, keys in sensor declaration order.
pub type Observation = SensorFrame;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("episode finished; call reset")]
    EpisodeFinished,
    #[error("no active episode; call reset")]
    NotReset,
    #[error(transparent)]
    Robot(#[from] RobotError),
    #[error("{0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InfoValue {
    Bool(bool),
    Number(f64),
    Text(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub success: bool,
    pub done: bool,
    pub info: Vec<(String, InfoValue)>,
}

impl StepResult {
    pub fn info(&self, key: &str) -> Option<&InfoValue> {
        self.info.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }
}

/// Pluggable dense reward.
pub type RewardFn = Arc<dyn Fn(&RewardInput<'_>) -> f64 + Send + Sync>;

pub fn default_reward_fn() -> RewardFn {
    Arc::new(compute_reward)
}

/// Seed for episode `index` of an environment seeded with `seed`.
pub fn episode_seed(seed: u64, index: u64) -> u64 {
    CounterRng::derive(seed, streams::EPISODE, index)
}

/// Goal for an episode: drawn from the goal box when randomized, else the
/// configured target. PickPlace always uses the bin center.
pub fn episode_goal(cfg: &EnvConfig, episode_seed: u64) -> Vec<f64> {
    let task = &cfg.task;
    if task.kind == TaskKind::PickPlace {
        if let Some(c) = task.bin_center {
            return c.to_array().to_vec();
        }
    }
    match (task.goal_randomize, task.goal_range) {
        (true, Some((lo, hi))) => {
            let mut rng = CounterRng::new(episode_seed, streams::GOAL);
            let x = rng.uniform_range(lo.x, hi.x);
            let y = rng.uniform_range(lo.y, hi.y);
            vec![x, y]
        }
        _ => task.target.clone(),
    }
}

pub struct Env {
    cfg: Arc<EnvConfig>,
    robot: Robot,
    reward_fn: RewardFn,
    goal: Vec<f64>,
    next_episode: u64,
    episode_seed: u64,
    steps: u32,
    done: bool,
    active: bool,
    latch: u32,
}

impl Env {
    pub fn new(cfg: Arc<EnvConfig>) -> Result<Self, EnvError> {
        cfg.validate().map_err(|e| EnvError::Config(e.to_string()))?;
        let robot = Robot::connect(cfg.clone())?;
        Ok(Self::with_robot(cfg, robot))
    }

    pub fn with_robot(cfg: Arc<EnvConfig>, robot: Robot) -> Self {
        let goal = cfg.task.target.clone();
        Self {
            cfg,
            robot,
            reward_fn: default_reward_fn(),
            goal,
            next_episode: 0,
            episode_seed: 0,
            steps: 0,
            done: false,
            active: false,
            latch: 0,
        }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn config_arc(&self) -> Arc<EnvConfig> {
        self.cfg.clone()
    }

    pub fn robot(&self) -> &Robot {
        &self.robot
    }

    pub fn robot_mut(&mut self) -> &mut Robot {
        &mut self.robot
    }

    pub fn set_reward_fn(&mut self, f: RewardFn) {
        self.reward_fn = f;
    }

    pub fn goal(&self) -> &[f64] {
        &self.goal
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Index of the episode that the next `reset()` starts.
    pub fn next_episode(&self) -> u64 {
        self.next_episode
    }

    pub fn current_episode_seed(&self) -> u64 {
        self.episode_seed
    }

    pub fn world(&self) -> Option<&WorldView> {
        self.robot.world()
    }

    pub fn snapshot(&self) -> Option<SimState> {
        self.robot.snapshot()
    }

    /// Starts the next episode.
    pub fn reset(&mut self) -> Result<Observation, EnvError> {
        let idx = self.next_episode;
        self.reset_episode(idx)
    }

    /// Starts episode `index` (subsequent `reset()` calls continue from
    /// `index + 1`).
    pub fn reset_episode(&mut self, index: u64) -> Result<Observation, EnvError> {
        let seed = episode_seed(self.cfg.seed, index);
        self.goal = episode_goal(&self.cfg, seed);
        self.robot.set_goal(self.goal.clone());
        let obs = self.robot.reset(seed)?;
        self.begin(index, seed);
        Ok(obs)
    }

    /// Starts an episode from an explicit simulator state instead of the
    /// randomized layout (replay).
    pub fn reset_to_state(&mut self, state: &SimState, goal: Vec<f64>, seed: u64) -> Result<Observation, EnvError> {
        self.goal = goal;
        self.robot.set_goal(self.goal.clone());
        let obs = self.robot.restore(state, seed)?;
        let idx = self.next_episode;
        self.begin(idx, seed);
        Ok(obs)
    }

    fn begin(&mut self, index: u64, seed: u64) {
        self.episode_seed = seed;
        self.next_episode = index + 1;
        self.steps = 0;
        self.done = false;
        self.active = true;
        self.latch = 0;
    }

    pub fn step(&mut self, action: &RobotCommand) -> Result<StepResult, EnvError> {
        if !self.active {
            return Err(EnvError::NotReset);
        }
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        self.robot.apply_command(action)?;
        let obs = self.robot.get_sensors()?;
        let world = self.robot.world().expect("sensors were just read");
        let task = &self.cfg.task;
        let model = &self.cfg.robot;
        let success = compute_success(task, world, model, &self.goal);
        let reward = (self.reward_fn)(&RewardInput { task, world, model, goal: &self.goal, action });
        self.steps += 1;
        self.latch = if success { self.latch + 1 } else { 0 };
        let latched = task.kind == TaskKind::PickPlace && self.latch >= task.success_latch;
        self.done = self.steps >= self.cfg.horizon || latched;
        let info = vec![
            ("solved".to_owned(), InfoValue::Bool(success)),
            ("time".to_owned(), InfoValue::Number(world.time)),
            ("step".to_owned(), InfoValue::Number(f64::from(self.steps))),
            ("latched".to_owned(), InfoValue::Bool(latched)),
        ];
        Ok(StepResult { obs, reward, success, done: self.done, info })
    }
}
