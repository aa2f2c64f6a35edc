//! Live teleoperation: a websocket gateway that turns human input events
//! into robot commands at a fixed control rate, streams scene updates to a
//! browser console and records demonstrations.

pub mod protocol;
mod server;
mod session;

use thiserror::Error;

pub use protocol::{ClientMessage, EpisodeEvent, EventKind, RecordAction, SceneObject, SceneUpdate, ServerMessage, TeleopEvent, Want};
pub use server::{TeleopOptions, TeleopServer, TeleopStats};
pub use session::{InputMap, SessionOptions, TeleopSession, DEFAULT_RATE_HZ, EE_SPEED, JOINT_SPEED};

use crate::dataset::DatasetError;
use crate::envs::EnvError;

#[derive(Debug, Error)]
pub enum TeleopError {
    #[error("invalid teleoperation setup: {0}")]
    Config(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("recording: {0}")]
    Recording(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
