//! hivekit: a self-contained robot-learning environment framework.
//!
//! - [`robot`]: one [`Robot`] interface over an in-process simulator and a
//!   networked hardware backend, selected by a single config flag, with a
//!   shared sensor pipeline (delay, noise, grid camera).
//! - [`envs`]: config-registered task environments whose dense rewards and
//!   success predicates are computed independently.
//! - [`collector`]: first-ready-first-served multi-worker rollout
//!   collection and the throughput benchmark.
//! - [`dataset`]: the RoboSet-lite trajectory container, manifests and
//!   replay verification.
//! - [`agents`]: random, scripted-expert and ridge behavior-cloning policies
//!   plus evaluation.
//! - [`teleop`]: the live teleoperation gateway.
//!
//! The math kernels ([`geom`], [`linalg`], [`sim::forward_kinematics`]) are
//! generic over [`num::Real`]; the aliases below pin them to `f64`, which is
//! what the runtime, wire protocol and file formats use.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod collector;
pub mod config;
pub mod dataset;
pub mod envs;
pub mod fixtures;
pub mod geom;
pub mod linalg;
pub mod num;
pub mod registry;
pub mod rng;
pub mod robot;
pub mod sim;
pub mod teleop;

pub use config::{parse_env_config, Backend, ConfigError, ControlMode, EnvConfig, SensorKind, SensorSpec};
pub use envs::{Env, EnvError, StepResult};
pub use registry::EnvRegistry;
pub use robot::{Gripper, Robot, RobotCommand, SensorFrame};
pub use sim::{RobotModelSpec, SimState};

pub type Vec2 = geom::Vec2<f64>;
pub type Matrix = linalg::Matrix<f64>;
pub type Cholesky = linalg::Cholesky<f64>;
pub type NormalEquations = linalg::NormalEquations<f64>;

/// Schema version stamped on every JSON document this crate emits.
pub const JSON_SCHEMA_VERSION: u32 = 1;
