//! The transport-free teleoperation session: folds input events into a held
//! command, steps the environment, records, and produces scene updates.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use super::protocol::{EpisodeEvent, EventKind, SceneObject, SceneUpdate, ServerMessage, TeleopEvent};
use super::TeleopError;
use crate::agents::{dls_ik_step, IK_MAX_STEP};
use crate::config::{ControlMode, EnvConfig, TaskKind};
use crate::dataset::{write_trajectories, Source, Trajectory, TrajectoryBuilder};
use crate::envs::{Env, Observation};
use crate::geom::Vec2;
use crate::robot::{Gripper, RobotCommand};
use crate::sim::{forward_kinematics, KV};

pub const DEFAULT_RATE_HZ: f64 = 20.0;
pub const JOINT_SPEED: f64 = 0.5;
pub const EE_SPEED: f64 = 0.2;

/// Device event → command delta.
#[derive(Clone, Debug, PartialEq)]
pub struct InputMap {
    /// Key code → (joint, velocity in rad/s).
    pub joint_keys: BTreeMap<String, (usize, f64)>,
    /// Axis code → (joint, rad/s at full deflection).
    pub joint_axes: BTreeMap<String, (usize, f64)>,
    /// Key code → end-effector velocity (m/s), used in end-effector mode.
    pub ee_keys: BTreeMap<String, Vec2<f64>>,
    /// Key codes that toggle grasp/release.
    pub grip_keys: BTreeSet<String>,
    /// Per-tick multiplier applied to axes that received no event.
    pub axis_decay: f64,
}

impl InputMap {
    /// Two keys per joint (`q`/`a`, `w`/`s`, ...), `axis<i>` per joint,
    /// arrow keys for end-effector motion and space for the gripper.
    pub fn default_for(n_joints: usize) -> Self {
        const PAIRS: [(&str, &str); 8] =
            [("q", "a"), ("w", "s"), ("e", "d"), ("r", "f"), ("t", "g"), ("y", "h"), ("u", "j"), ("i", "k")];
        let mut joint_keys = BTreeMap::new();
        let mut joint_axes = BTreeMap::new();
        for (j, (plus, minus)) in PAIRS.iter().enumerate().take(n_joints) {
            joint_keys.insert((*plus).to_owned(), (j, JOINT_SPEED));
            joint_keys.insert((*minus).to_owned(), (j, -JOINT_SPEED));
            joint_axes.insert(format!("axis{j}"), (j, JOINT_SPEED));
        }
        let ee_keys = [
            ("ArrowRight", Vec2::new(EE_SPEED, 0.0)),
            ("ArrowLeft", Vec2::new(-EE_SPEED, 0.0)),
            ("ArrowUp", Vec2::new(0.0, EE_SPEED)),
            ("ArrowDown", Vec2::new(0.0, -EE_SPEED)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect();
        let grip_keys = [" ", "Space", "space"].into_iter().map(str::to_owned).collect();
        Self { joint_keys, joint_axes, ee_keys, grip_keys, axis_decay: 0.5 }
    }
}

#[derive(Clone, Debug)]
pub struct SessionOptions {
    pub rate_hz: f64,
    /// Arrow keys move the end effector through inverse kinematics instead
    /// of joint keys moving joints.
    pub ee_space: bool,
    /// Container rewritten with every finished recording.
    pub record_path: Option<PathBuf>,
    pub input_map: Option<InputMap>,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self { rate_hz: DEFAULT_RATE_HZ, ee_space: false, record_path: None, input_map: None }
    }
}

struct Recording {
    builder: Option<TrajectoryBuilder>,
    stop_at_boundary: bool,
}

pub struct TeleopSession {
    env: Env,
    rate_hz: f64,
    ee_space: bool,
    map: InputMap,
    pressed: BTreeSet<String>,
    axes: BTreeMap<String, (f64, bool)>,
    grip_toggle: bool,
    reset_requested: bool,
    target: Vec<f64>,
    obs: Observation,
    success: bool,
    reward: f64,
    episode: u64,
    recording: Option<Recording>,
    recorded: Vec<Trajectory>,
    record_path: Option<PathBuf>,
}

impl TeleopSession {
    pub fn new(cfg: Arc<EnvConfig>, opts: SessionOptions) -> Result<Self, TeleopError> {
        if !(1.0..=100.0).contains(&opts.rate_hz) {
            return Err(TeleopError::Config(format!("rate_hz {} outside [1, 100]", opts.rate_hz)));
        }
        if opts.ee_space && cfg.task.kind != TaskKind::Reach {
            return Err(TeleopError::Config("end-effector teleoperation is available for reach tasks".into()));
        }
        let map = opts.input_map.unwrap_or_else(|| InputMap::default_for(cfg.joint_count()));
        let mut env = Env::new(cfg)?;
        let obs = env.reset()?;
        let target = env.world().expect("reset reads sensors").joint_pos.clone();
        Ok(Self {
            env,
            rate_hz: opts.rate_hz,
            ee_space: opts.ee_space,
            map,
            pressed: BTreeSet::new(),
            axes: BTreeMap::new(),
            grip_toggle: false,
            reset_requested: false,
            target,
            obs,
            success: false,
            reward: 0.0,
            episode: 0,
            recording: None,
            recorded: Vec::new(),
            record_path: opts.record_path,
        })
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn is_recording(&self) -> bool {
        self.recording.is_some()
    }

    pub fn recorded(&self) -> &[Trajectory] {
        &self.recorded
    }

    /// Folds one event into the held input state (last writer wins).
    pub fn handle_event(&mut self, ev: &TeleopEvent) -> Result<(), TeleopError> {
        ev.validate().map_err(TeleopError::Protocol)?;
        match ev.kind {
            EventKind::KeyDown => {
                if self.map.grip_keys.contains(&ev.code)
                    && !self.pressed.contains(&ev.code) {
                        self.grip_toggle = !self.grip_toggle;
                    }
                self.pressed.insert(ev.code.clone());
            }
            EventKind::KeyUp => {
                self.pressed.remove(&ev.code);
            }
            EventKind::Axis => {
                self.axes.insert(ev.code.clone(), (ev.value.expect("validated"), true));
            }
        }
        Ok(())
    }

    /// Releases every held key and zeroes every axis.
    pub fn clear_input(&mut self) {
        self.pressed.clear();
        self.axes.clear();
        self.grip_toggle = false;
    }

    pub fn request_reset(&mut self) {
        self.reset_requested = true;
    }

    pub fn start_recording(&mut self) -> Result<Vec<ServerMessage>, TeleopError> {
        if self.recording.is_some() {
            return Err(TeleopError::Recording("recording already in progress".into()));
        }
        let builder = TrajectoryBuilder::begin(&self.env, self.obs.clone(), Source::HumanTeleop)?;
        self.recording = Some(Recording { builder: Some(builder), stop_at_boundary: false });
        Ok(vec![ServerMessage::Notice { msg: "recording started".into() }])
    }

    /// Stops immediately when nothing was recorded yet; otherwise the
    /// recording ends at the next episode boundary.
    pub fn stop_recording(&mut self) -> Result<Vec<ServerMessage>, TeleopError> {
        let rec = self.recording.as_mut().ok_or_else(|| TeleopError::Recording("no recording in progress".into()))?;
        if rec.builder.as_ref().is_none_or(TrajectoryBuilder::is_empty) {
            self.recording = None;
            return Ok(vec![ServerMessage::Notice { msg: "empty recording discarded".into() }]);
        }
        rec.stop_at_boundary = true;
        Ok(vec![ServerMessage::Notice { msg: "recording stops at the end of this episode".into() }])
    }

    fn joint_velocity(&mut self) -> Vec<f64> {
        let n = self.env.config().joint_count();
        let mut v = vec![0.0; n];
        if self.ee_space {
            let mut ee_vel = Vec2::zero();
            for k in &self.pressed {
                if let Some(d) = self.map.ee_keys.get(k) {
                    ee_vel += *d;
                }
            }
            if ee_vel != Vec2::zero() {
                let world = self.env.world().expect("episode active");
                let model = &self.env.config().robot;
                let step = self.env.config().dt * f64::from(self.env.config().frame_skip);
                let q = if self.env.config().control_mode == ControlMode::Position { &self.target } else { &world.joint_pos };
                let ee = crate::sim::end_effector(&model.link_lengths, q);
                let moved = dls_ik_step(model, q, ee + ee_vel * step, IK_MAX_STEP);
                for (j, (a, b)) in moved.iter().zip(q).enumerate() {
                    v[j] = (a - b) / step;
                }
            }
        } else {
            for k in &self.pressed {
                if let Some(&(j, speed)) = self.map.joint_keys.get(k) {
                    v[j] += speed;
                }
            }
        }
        for (code, (value, fresh)) in self.axes.iter_mut() {
            if let Some(&(j, scale)) = self.map.joint_axes.get(code) {
                if !self.ee_space {
                    v[j] += *value * scale;
                }
            }
            if !*fresh {
                *value *= self.map.axis_decay;
                if value.abs() < 1e-3 {
                    *value = 0.0;
                }
            }
            *fresh = false;
        }
        v
    }

    fn command(&mut self) -> RobotCommand {
        let vel = self.joint_velocity();
        let cfg = self.env.config();
        let step = cfg.dt * f64::from(cfg.frame_skip);
        let world = self.env.world().expect("episode active");
        let values = match cfg.control_mode {
            ControlMode::Position => {
                for ((t, v), &(lo, hi)) in self.target.iter_mut().zip(&vel).zip(&cfg.robot.joint_limits) {
                    *t = (*t + v * step).clamp(lo, hi);
                }
                self.target.clone()
            }
            ControlMode::Velocity => vel,
            ControlMode::Torque => vel
                .iter()
                .zip(&world.joint_vel)
                .zip(&cfg.robot.torque_limits)
                .map(|((v, qd), lim)| (KV * (v - qd)).clamp(-lim, *lim))
                .collect(),
        };
        let gripper = if std::mem::take(&mut self.grip_toggle) {
            if world.grasped_object.is_some() {
                Gripper::Release
            } else {
                Gripper::Grasp
            }
        } else {
            Gripper::NoChange
        };
        RobotCommand::new(cfg.control_mode, values).with_gripper(gripper)
    }

    /// One control tick: step, record, and report.
    pub fn tick(&mut self) -> Result<Vec<ServerMessage>, TeleopError> {
        let mut out = Vec::new();
        if std::mem::take(&mut self.reset_requested) {
            self.boundary(&mut out)?;
        }
        let cmd = self.command();
        let result = self.env.step(&cmd)?;
        if let Some(b) = self.recording.as_mut().and_then(|r| r.builder.as_mut()) {
            b.push(&self.env, &cmd, &result)?;
        }
        self.success = result.success;
        self.reward = result.reward;
        self.obs = result.obs;
        out.push(ServerMessage::Scene(self.scene()));
        if result.done {
            out.push(ServerMessage::Episode { event: EpisodeEvent::Done });
            self.boundary(&mut out)?;
        }
        Ok(out)
    }

    /// Ends the current episode: finalizes any recording, resets the
    /// environment and restarts recording unless a stop was requested.
    fn boundary(&mut self, out: &mut Vec<ServerMessage>) -> Result<(), TeleopError> {
        let finished = self.recording.as_mut().and_then(|r| r.builder.take());
        if let Some(b) = finished.filter(|b| !b.is_empty()) {
            self.recorded.push(b.finish());
            out.push(ServerMessage::Notice { msg: format!("saved trajectory {}", self.recorded.len()) });
            if let Some(path) = &self.record_path {
                if let Err(e) = write_trajectories(path, self.env.config(), &self.recorded) {
                    out.push(ServerMessage::Error { msg: format!("cannot write {}: {e}", path.display()) });
                }
            }
        }
        self.obs = self.env.reset()?;
        self.episode += 1;
        self.target = self.env.world().expect("reset reads sensors").joint_pos.clone();
        self.success = false;
        self.reward = 0.0;
        if self.recording.as_ref().is_some_and(|r| r.stop_at_boundary) {
            self.recording = None;
            out.push(ServerMessage::Notice { msg: "recording stopped".into() });
        } else if let Some(r) = self.recording.as_mut() {
            r.builder = Some(TrajectoryBuilder::begin(&self.env, self.obs.clone(), Source::HumanTeleop)?);
        }
        out.push(ServerMessage::Episode { event: EpisodeEvent::Reset });
        Ok(())
    }

    /// Vector description of the current scene.
    pub fn scene(&self) -> SceneUpdate {
        let cfg = self.env.config();
        let world = self.env.world().expect("episode active");
        let links = forward_kinematics(&cfg.robot.link_lengths, &world.joint_pos)
            .expect("validated joint dimension")
            .into_iter()
            .map(|p| p.to_array())
            .collect();
        let goal = self.env.goal();
        let target = match cfg.task.kind {
            TaskKind::PendulumSwingup => {
                let l = cfg.robot.link_lengths[0];
                [l * goal[0].cos(), l * goal[0].sin()]
            }
            _ => [goal[0], goal.get(1).copied().unwrap_or(0.0)],
        };
        SceneUpdate {
            time: world.time,
            links,
            objects: world
                .objects
                .iter()
                .map(|o| SceneObject { p: o.position.to_array(), r: o.radius, c: o.color_index })
                .collect(),
            target,
            success: self.success,
            reward: self.reward,
            step: self.env.steps(),
            episode: self.episode,
            recording: self.recording.is_some(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::EnvRegistry;

    fn session(id: &str) -> TeleopSession {
        let cfg = EnvRegistry::builtin().config(id).unwrap();
        TeleopSession::new(cfg, SessionOptions::default()).unwrap()
    }

    #[test]
    fn idle_holds_position() {
        let mut s = session("reach-v0");
        let q0 = s.env().world().unwrap().joint_pos.clone();
        for _ in 0..10 {
            s.tick().unwrap();
        }
        assert_eq!(s.env().world().unwrap().joint_pos, q0);
    }

    #[test]
    fn held_key_moves_joint_up() {
        let mut s = session("reach-v0");
        s.handle_event(&TeleopEvent::key_down("q")).unwrap();
        let mut last = s.env().world().unwrap().joint_pos[0];
        for _ in 0..10 {
            s.tick().unwrap();
            let q = s.env().world().unwrap().joint_pos[0];
            assert!(q > last);
            last = q;
        }
    }

    #[test]
    fn start_stop_without_steps_discards() {
        let mut s = session("reach-v0");
        s.start_recording().unwrap();
        assert!(s.start_recording().is_err());
        let msgs = s.stop_recording().unwrap();
        assert_eq!(msgs, vec![ServerMessage::Notice { msg: "empty recording discarded".into() }]);
        assert!(s.stop_recording().is_err());
        assert!(s.recorded().is_empty());
    }

    #[test]
    fn recording_splits_at_episode_boundaries() {
        let mut s = session("reach-v0");
        s.start_recording().unwrap();
        let horizon = s.env().config().horizon as usize;
        for _ in 0..(2 * horizon + 3) {
            s.tick().unwrap();
        }
        assert_eq!(s.recorded().len(), 2);
        assert!(s.recorded().iter().all(|t| t.len() == horizon && t.source == Source::HumanTeleop));
    }

    #[test]
    fn axis_decays_without_events() {
        let mut s = session("reach-v0");
        s.handle_event(&TeleopEvent::axis("axis1", 1.0)).unwrap();
        s.tick().unwrap();
        let v1 = s.axes["axis1"].0;
        s.tick().unwrap();
        assert!(s.axes["axis1"].0 < v1);
    }
}
