//! Unified robot interface over a simulation backend and a networked hardware
//! backend. Backend selection reads only `EnvConfig::backend`; the sensor
//! pipeline runs client-side, identically for both.

pub mod camera;
mod command;
pub mod hardware;
pub mod mock;
pub mod sensors;
pub mod wire;

use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

pub use command::{Gripper, RobotCommand, SensorFrame};
pub use sensors::{ObjectView, SensorPipeline, WorldView};

use crate::config::{Backend, ControlMode, EnvConfig};
use crate::rng::{streams, CounterRng};
use crate::sim::{self, SimError, SimState};

/// Default connect/read timeout for the hardware backend.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Error)]
pub enum RobotError {
    #[error("control mode mismatch: robot expects {expected:?}, command is {got:?}")]
    ModeMismatch { expected: ControlMode, got: ControlMode },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("connection to {endpoint} failed: {reason}")]
    Connection { endpoint: String, reason: String },
    #[error("wire timeout waiting for {0}")]
    Timeout(&'static str),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("hardware error {code}: {message}")]
    Remote { code: u16, message: String },
    #[error("operation requires the sim backend: {0}")]
    Unsupported(&'static str),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A concrete provider of actuation and ground-truth state.
pub trait RobotBackend: Send {
    fn kind(&self) -> Backend;
    /// Restores the canonical scene and applies episode randomization.
    fn reset(&mut self, episode_seed: u64) -> Result<(), RobotError>;
    /// Executes one environment-level command (`frame_skip` physics steps).
    fn apply(&mut self, cmd: &RobotCommand) -> Result<(), RobotError>;
    fn observe(&mut self) -> Result<WorldView, RobotError>;
    /// Full simulator state, when the backend has one.
    fn snapshot(&self) -> Option<SimState>;
    fn restore(&mut self, state: &SimState) -> Result<(), RobotError>;
}

/// In-process simulation backend.
pub struct SimBackend {
    cfg: Arc<EnvConfig>,
    state: SimState,
}

impl SimBackend {
    pub fn new(cfg: Arc<EnvConfig>) -> Result<Self, RobotError> {
        cfg.robot.validate()?;
        let state = SimState::canonical(&cfg);
        Ok(Self { cfg, state })
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }
}

/// Canonical scene followed by the seeded layout draw for one episode.
pub fn episode_initial_state(cfg: &EnvConfig, episode_seed: u64) -> SimState {
    let mut rng = CounterRng::new(episode_seed, streams::SCENE);
    sim::randomize_scene(&SimState::canonical(cfg), &cfg.randomization, &mut rng)
}

/// One environment step on a bare state: gripper request, then `frame_skip`
/// physics steps.
pub fn step_state(cfg: &EnvConfig, state: &SimState, cmd: &RobotCommand) -> Result<SimState, SimError> {
    let mut s = sim::apply_gripper(state, &cfg.robot, cmd.gripper);
    for _ in 0..cfg.frame_skip {
        s = sim::sim_step(&s, &cfg.robot, cmd, cfg.dt)?;
    }
    Ok(s)
}

impl RobotBackend for SimBackend {
    fn kind(&self) -> Backend {
        Backend::Sim
    }

    fn reset(&mut self, episode_seed: u64) -> Result<(), RobotError> {
        self.state = episode_initial_state(&self.cfg, episode_seed);
        Ok(())
    }

    fn apply(&mut self, cmd: &RobotCommand) -> Result<(), RobotError> {
        self.state = step_state(&self.cfg, &self.state, cmd)?;
        Ok(())
    }

    fn observe(&mut self) -> Result<WorldView, RobotError> {
        Ok(WorldView::from_state(&self.state))
    }

    fn snapshot(&self) -> Option<SimState> {
        Some(self.state.clone())
    }

    fn restore(&mut self, state: &SimState) -> Result<(), RobotError> {
        let n = self.cfg.joint_count();
        if state.joint_pos.len() != n || state.joint_vel.len() != n {
            return Err(SimError::Dimension { expected: n, got: state.joint_pos.len() }.into());
        }
        self.state = state.clone();
        Ok(())
    }
}

/// The robot: a backend plus the sensor pipeline.
pub struct Robot {
    cfg: Arc<EnvConfig>,
    backend: Box<dyn RobotBackend>,
    pipeline: SensorPipeline,
    goal: Vec<f64>,
    world: Option<WorldView>,
}

impl Robot {
    /// Connects to the backend named by `cfg.backend`.
    pub fn connect(cfg: Arc<EnvConfig>) -> Result<Self, RobotError> {
        Self::connect_with_timeout(cfg, DEFAULT_TIMEOUT)
    }

    pub fn connect_with_timeout(cfg: Arc<EnvConfig>, timeout: Duration) -> Result<Self, RobotError> {
        let backend: Box<dyn RobotBackend> = match cfg.backend {
            Backend::Sim => Box::new(SimBackend::new(cfg.clone())?),
            Backend::Hardware => Box::new(hardware::HardwareBackend::connect(cfg.clone(), timeout)?),
        };
        Ok(Self::with_backend(cfg, backend))
    }

    pub fn with_backend(cfg: Arc<EnvConfig>, backend: Box<dyn RobotBackend>) -> Self {
        let pipeline = SensorPipeline::new(cfg.sensors.clone());
        let goal = cfg.task.target.clone();
        Self { cfg, backend, pipeline, goal, world: None }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn backend_kind(&self) -> Backend {
        self.backend.kind()
    }

    /// Goal vector reported by `Goal` sensors.
    pub fn set_goal(&mut self, goal: Vec<f64>) {
        self.goal = goal;
    }

    pub fn set_noise_enabled(&mut self, on: bool) {
        self.pipeline.set_noise_enabled(on);
    }

    pub fn reset(&mut self, episode_seed: u64) -> Result<SensorFrame, RobotError> {
        self.backend.reset(episode_seed)?;
        self.pipeline.reset(episode_seed);
        self.get_sensors()
    }

    pub fn apply_command(&mut self, cmd: &RobotCommand) -> Result<(), RobotError> {
        if cmd.mode != self.cfg.control_mode {
            return Err(RobotError::ModeMismatch { expected: self.cfg.control_mode, got: cmd.mode });
        }
        let n = self.cfg.joint_count();
        if cmd.values.len() != n {
            return Err(SimError::Dimension { expected: n, got: cmd.values.len() }.into());
        }
        if !cmd.is_finite() {
            return Err(SimError::NonFinite.into());
        }
        self.backend.apply(cmd)
    }

    /// Reads ground truth from the backend and runs it through the pipeline.
    pub fn get_sensors(&mut self) -> Result<SensorFrame, RobotError> {
        let world = self.backend.observe()?;
        let frame = self.pipeline.process(&self.cfg.robot, &world, &self.goal);
        self.world = Some(world);
        Ok(frame)
    }

    /// Ground truth from the most recent sensor read.
    pub fn world(&self) -> Option<&WorldView> {
        self.world.as_ref()
    }

    pub fn snapshot(&self) -> Option<SimState> {
        self.backend.snapshot()
    }

    /// Puts the backend into `state` and clears sensor history, keeping the
    /// noise stream of `episode_seed`.
    pub fn restore(&mut self, state: &SimState, episode_seed: u64) -> Result<SensorFrame, RobotError> {
        self.backend.restore(state)?;
        self.pipeline.reset(episode_seed);
        self.get_sensors()
    }
}
