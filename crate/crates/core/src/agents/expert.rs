//! Analytic controllers that play the expert role for each task.
//!
//! Every expert is stateless: the phase of the multi-stage tasks is read off
//! the observation (a grasped disc sits exactly on the end effector).

use crate::config::{ControlMode, EnvConfig, SensorKind, TaskKind, TaskSpec};
use crate::envs::Observation;
use crate::geom::Vec2;
use crate::num::wrap_angle;
use crate::rng::CounterRng;
use crate::robot::{Gripper, RobotCommand};
use crate::sim::{end_effector, jacobian, RobotKind, RobotModelSpec, GRAVITY, KD, KP};

use super::{obs_get, AgentError, Policy, PolicyDescriptor};

/// Damping of the least-squares inverse kinematics step.
pub const IK_DAMPING: f64 = 0.05;
/// Largest joint change one IK step may request (rad).
pub const IK_MAX_STEP: f64 = 0.25;
/// Gap kept between the end effector and a disc while getting behind it.
const PUSH_CLEARANCE: f64 = 0.05;
/// Longest distance the pusher advances the disc per step (m).
const PUSH_STRIDE: f64 = 0.04;
const GRASPED_TOL: f64 = 1e-6;
const RELEASE_TOL: f64 = 0.02;
const RELEASE_SPEED: f64 = 0.05;
const VELOCITY_GAIN: f64 = 5.0;
const CAPTURE_ANGLE: f64 = 0.5;
const CAPTURE_KP: f64 = 30.0;
const CAPTURE_KD: f64 = 8.0;

/// One damped-least-squares step `Δq = Jᵀ (J Jᵀ + λ²I)⁻¹ (target − EE)`,
/// scaled so that no joint moves more than `max_step`, then clamped into
/// the joint limits. Returns the new joint target.
pub fn dls_ik_step(model: &RobotModelSpec, q: &[f64], target: Vec2<f64>, max_step: f64) -> Vec<f64> {
    let links = &model.link_lengths;
    let e = target - end_effector(links, q);
    let (jx, jy) = jacobian(links, q);
    let l2 = IK_DAMPING * IK_DAMPING;
    let a = jx.iter().map(|v| v * v).sum::<f64>() + l2;
    let b = jx.iter().zip(&jy).map(|(x, y)| x * y).sum::<f64>();
    let d = jy.iter().map(|v| v * v).sum::<f64>() + l2;
    let det = a * d - b * b;
    let yx = (d * e.x - b * e.y) / det;
    let yy = (a * e.y - b * e.x) / det;
    let mut dq: Vec<f64> = jx.iter().zip(&jy).map(|(x, y)| x * yx + y * yy).collect();
    let peak = dq.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > max_step {
        let s = max_step / peak;
        dq.iter_mut().for_each(|v| *v *= s);
    }
    q.iter()
        .zip(dq)
        .zip(&model.joint_limits)
        .map(|((qi, d), &(lo, hi))| (qi + d).clamp(lo, hi))
        .collect()
}

/// The scripted expert for `cfg`'s task.
pub fn scripted_expert(cfg: &EnvConfig) -> Result<ScriptedExpert, AgentError> {
    ScriptedExpert::new(cfg)
}

pub struct ScriptedExpert {
    env_id: String,
    mode: ControlMode,
    model: RobotModelSpec,
    task: TaskSpec,
    qpos: String,
    qvel: Option<String>,
    obj: Option<String>,
    goal: Option<String>,
}

fn first_of(cfg: &EnvConfig, kinds: &[SensorKind]) -> Option<String> {
    cfg.sensors.iter().find(|s| kinds.contains(&s.kind)).map(|s| s.name.clone())
}

impl ScriptedExpert {
    pub fn new(cfg: &EnvConfig) -> Result<Self, AgentError> {
        let unsupported = |m: &str| AgentError::Unsupported(format!("{} expert: {m}", cfg.env_id));
        let qpos = first_of(cfg, &[SensorKind::JointPos, SensorKind::Proprio])
            .ok_or_else(|| unsupported("needs a joint_pos or proprio sensor"))?;
        let qvel = first_of(cfg, &[SensorKind::JointVel]);
        let obj = first_of(cfg, &[SensorKind::ObjectPose]);
        let goal = first_of(cfg, &[SensorKind::Goal]);
        let arm = cfg.robot.kind == RobotKind::PlanarArm;
        match cfg.task.kind {
            TaskKind::Reach if !arm => return Err(unsupported("reach needs an arm")),
            TaskKind::Push | TaskKind::PickPlace if !arm || obj.is_none() => {
                return Err(unsupported("needs an arm and an object_pose sensor"))
            }
            TaskKind::PendulumSwingup if arm || cfg.control_mode != ControlMode::Torque || qvel.is_none() => {
                return Err(unsupported("swing-up needs a torque-controlled pendulum and a joint_vel sensor"))
            }
            _ => {}
        }
        Ok(Self {
            env_id: cfg.env_id.clone(),
            mode: cfg.control_mode,
            model: cfg.robot.clone(),
            task: cfg.task.clone(),
            qpos,
            qvel,
            obj,
            goal,
        })
    }

    fn goal_point(&self, obs: &Observation) -> Result<Vec2<f64>, AgentError> {
        match &self.goal {
            Some(k) => {
                let g = obs_get(obs, k)?;
                Ok(Vec2::new(g[0], g.get(1).copied().unwrap_or(0.0)))
            }
            None => Ok(self.task.target_point()),
        }
    }

    fn joints<'a>(&self, obs: &'a Observation) -> Result<&'a [f64], AgentError> {
        let n = self.model.joint_count();
        let q = obs_get(obs, &self.qpos)?;
        q.get(..n).ok_or_else(|| AgentError::MissingObservation(self.qpos.clone()))
    }

    fn velocities(&self, obs: &Observation) -> Result<Option<Vec<f64>>, AgentError> {
        match &self.qvel {
            Some(k) => Ok(Some(obs_get(obs, k)?.to_vec())),
            None => Ok(None),
        }
    }

    /// Turns a joint-space target into a command in the configured mode.
    fn command_toward(&self, q: &[f64], qd: Option<&[f64]>, target: Vec<f64>) -> RobotCommand {
        let values = match self.mode {
            ControlMode::Position => target,
            ControlMode::Velocity => target.iter().zip(q).map(|(t, q)| VELOCITY_GAIN * (t - q)).collect(),
            ControlMode::Torque => target
                .iter()
                .enumerate()
                .map(|(j, t)| {
                    let v = qd.map_or(0.0, |qd| qd[j]);
                    let lim = self.model.torque_limits[j];
                    (KP * (t - q[j]) - KD * v).clamp(-lim, lim)
                })
                .collect(),
        };
        RobotCommand::new(self.mode, values)
    }

    fn reach(&self, obs: &Observation) -> Result<RobotCommand, AgentError> {
        let q = self.joints(obs)?;
        let qd = self.velocities(obs)?;
        let target = dls_ik_step(&self.model, q, self.goal_point(obs)?, IK_MAX_STEP);
        Ok(self.command_toward(q, qd.as_deref(), target))
    }

    fn object(&self, obs: &Observation) -> Result<Vec2<f64>, AgentError> {
        let key = self.obj.as_ref().expect("checked at construction");
        let o = obs_get(obs, key)?;
        if o.len() < 2 {
            return Err(AgentError::MissingObservation(key.clone()));
        }
        Ok(Vec2::new(o[0], o[1]))
    }

    /// End-effector waypoint for pushing the disc at `obj` toward `goal`.
    pub fn push_waypoint(&self, ee: Vec2<f64>, obj: Vec2<f64>, goal: Vec2<f64>) -> Vec2<f64> {
        let r = self.task.object_radius;
        let to_goal = goal - obj;
        let remaining = to_goal.norm();
        let Some(d) = to_goal.normalized() else {
            return ee;
        };
        let perp = d.perp();
        let rel = ee - obj;
        let along = rel.dot(d);
        let lateral = rel.dot(perp);
        let side = if lateral >= 0.0 { 1.0 } else { -1.0 };
        if along > -0.5 * r {
            // Beside or in front of the disc: swing around on the near side.
            if rel.norm() < r + 0.5 * PUSH_CLEARANCE {
                return obj + rel.normalized().unwrap_or(perp) * (r + PUSH_CLEARANCE);
            }
            return obj + perp * (side * (r + PUSH_CLEARANCE)) - d * r;
        }
        if lateral.abs() > 0.3 * r {
            return obj - d * (r + 0.5 * PUSH_CLEARANCE);
        }
        let stride = (0.6 * remaining).min(PUSH_STRIDE);
        obj + d * (stride - r)
    }

    fn push(&self, obs: &Observation) -> Result<RobotCommand, AgentError> {
        let q = self.joints(obs)?;
        let qd = self.velocities(obs)?;
        let ee = end_effector(&self.model.link_lengths, q);
        let waypoint = self.push_waypoint(ee, self.object(obs)?, self.goal_point(obs)?);
        let target = dls_ik_step(&self.model, q, waypoint, IK_MAX_STEP);
        Ok(self.command_toward(q, qd.as_deref(), target))
    }

    fn pick_place(&self, obs: &Observation) -> Result<RobotCommand, AgentError> {
        let q = self.joints(obs)?;
        let qd = self.velocities(obs)?;
        let ee = end_effector(&self.model.link_lengths, q);
        let obj = self.object(obs)?;
        let bin = self.task.bin_center.unwrap_or_else(|| self.task.target_point());
        let bin_radius = self.task.bin_radius.unwrap_or(self.task.success_radius);
        let grasped = ee.dist(obj) < GRASPED_TOL;
        let speed = qd.as_ref().map_or(0.0, |v| v.iter().fold(0.0f64, |m, x| m.max(x.abs())));
        let (waypoint, gripper) = if grasped {
            let release = ee.dist(bin) < RELEASE_TOL && speed < RELEASE_SPEED;
            (bin, if release { Gripper::Release } else { Gripper::NoChange })
        } else if obj.dist(bin) < 0.5 * bin_radius {
            (ee, Gripper::NoChange)
        } else {
            let grasp = ee.dist(obj) <= 0.9 * self.model.gripper_radius;
            (obj, if grasp { Gripper::Grasp } else { Gripper::NoChange })
        };
        let target = dls_ik_step(&self.model, q, waypoint, IK_MAX_STEP);
        Ok(self.command_toward(q, qd.as_deref(), target).with_gripper(gripper))
    }

    fn swing_up(&self, obs: &Observation) -> Result<RobotCommand, AgentError> {
        let theta = self.joints(obs)?[0];
        let omega = self.velocities(obs)?.expect("checked at construction")[0];
        let l = self.model.link_lengths[0];
        let inertia = l * l;
        let gl = GRAVITY * l;
        let limit = self.model.torque_limits[0];
        let target = self.task.target[0];
        let err = wrap_angle(theta - target);
        let energy = 0.5 * inertia * omega * omega + gl * theta.sin();
        let deficit = gl * target.sin() - energy;
        let u = if err.abs() < CAPTURE_ANGLE {
            gl * theta.cos() + inertia * (-CAPTURE_KP * err - CAPTURE_KD * omega)
        } else if omega.abs() < 1e-3 {
            limit
        } else {
            limit * deficit.signum() * omega.signum()
        };
        Ok(RobotCommand::new(ControlMode::Torque, vec![u.clamp(-limit, limit)]))
    }
}

impl Policy for ScriptedExpert {
    fn act(&self, obs: &Observation, _rng: &mut CounterRng) -> Result<RobotCommand, AgentError> {
        match self.task.kind {
            TaskKind::Reach => self.reach(obs),
            TaskKind::Push => self.push(obs),
            TaskKind::PickPlace => self.pick_place(obs),
            TaskKind::PendulumSwingup => self.swing_up(obs),
        }
    }

    fn descriptor(&self) -> PolicyDescriptor {
        let obs_keys = [Some(&self.qpos), self.qvel.as_ref(), self.obj.as_ref(), self.goal.as_ref()]
            .into_iter()
            .flatten()
            .cloned()
            .collect();
        PolicyDescriptor { kind: "expert".into(), env_id: self.env_id.clone(), obs_keys }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_env_config;
    use crate::fixtures;

    fn cfg(name: &str) -> EnvConfig {
        parse_env_config(fixtures::get(name).unwrap()).unwrap()
    }

    fn obs(pairs: &[(&str, Vec<f64>)]) -> Observation {
        Observation { timestamp: 0.0, readings: pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect() }
    }

    #[test]
    fn reach_fixed_point_at_target() {
        let c = cfg("reach-v0.cfg");
        let q = vec![0.2, 0.7, -0.4];
        let ee = end_effector(&c.robot.link_lengths, &q);
        let expert = scripted_expert(&c).unwrap();
        let o = obs(&[("qpos", q.clone()), ("qvel", vec![0.0; 3]), ("ee", ee.to_array().to_vec()), ("goal", ee.to_array().to_vec())]);
        let cmd = expert.act(&o, &mut CounterRng::new(0, 0)).unwrap();
        let delta = cmd.values.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(delta < 1e-6, "{delta}");
    }

    #[test]
    fn ik_step_reduces_error() {
        let c = cfg("reach-v0.cfg");
        let q = c.robot.home_position();
        let goal = Vec2::new(0.6, 0.3);
        let before = end_effector(&c.robot.link_lengths, &q).dist(goal);
        let q2 = dls_ik_step(&c.robot, &q, goal, IK_MAX_STEP);
        assert!(end_effector(&c.robot.link_lengths, &q2).dist(goal) < before);
    }

    #[test]
    fn pendulum_needs_torque_mode() {
        let mut c = cfg("pendulum-v0.cfg");
        c.control_mode = ControlMode::Position;
        assert!(matches!(scripted_expert(&c), Err(AgentError::Unsupported(_))));
    }
}
