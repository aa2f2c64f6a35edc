//! Deterministic planar physics: a kinematic-chain arm or a torque-driven
//! pendulum, plus free discs that the end effector can push or grasp.
//!
//! Arm joints are decoupled unit inertias moving in the horizontal plane and
//! are integrated with semi-implicit Euler. The pendulum is a unit point mass
//! under gravity, integrated with a discrete-gradient step so that its
//! mechanical energy can only decrease when no torque is applied. Contact is
//! an overlap projection between the end-effector point and each disc; there
//! is no restitution or friction cone.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ControlMode, EnvConfig, RandomizationSpec};
use crate::geom::Vec2;
use crate::num::{sinc, Real};
use crate::rng::CounterRng;
use crate::robot::{Gripper, RobotCommand};

/// Position-mode proportional gain (1/s²).
pub const KP: f64 = 100.0;
/// Position-mode derivative gain (1/s); critical damping for unit inertia.
pub const KD: f64 = 20.0;
/// Velocity-mode tracking gain (1/s).
pub const KV: f64 = 20.0;
/// Linear velocity damping applied to free discs (1/s).
pub const DISC_DAMPING: f64 = 2.0;
pub const GRAVITY: f64 = 9.81;
/// Viscous joint damping of the pendulum (N·m·s/rad).
pub const PENDULUM_DAMPING: f64 = 0.1;
/// Number of distinct object colors.
pub const PALETTE_SIZE: u8 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite command component")]
    NonFinite,
    #[error("invalid robot model: {0}")]
    Model(String),
    #[error("dt must be positive")]
    Timestep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotKind {
    PlanarArm,
    Pendulum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotModelSpec {
    pub kind: RobotKind,
    pub link_lengths: Vec<f64>,
    pub joint_limits: Vec<(f64, f64)>,
    pub torque_limits: Vec<f64>,
    /// Grasp capture radius around the end effector (m).
    pub gripper_radius: f64,
}

impl RobotModelSpec {
    pub fn joint_count(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let n = self.link_lengths.len();
        if n == 0 {
            return Err(SimError::Model("at least one link required".into()));
        }
        if self.link_lengths.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(SimError::Model("link lengths must be positive".into()));
        }
        if self.joint_limits.len() != n || self.torque_limits.len() != n {
            return Err(SimError::Model(format!(
                "link count {n} must equal joint_limits ({}) and torque_limits ({})",
                self.joint_limits.len(),
                self.torque_limits.len()
            )));
        }
        if self.joint_limits.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(SimError::Model("joint limit lo < hi required".into()));
        }
        if self.torque_limits.iter().any(|t| !(*t > 0.0)) {
            return Err(SimError::Model("torque limits must be positive".into()));
        }
        if !(self.gripper_radius >= 0.0) {
            return Err(SimError::Model("gripper_radius must be >= 0".into()));
        }
        if self.kind == RobotKind::Pendulum && n != 1 {
            return Err(SimError::Model("pendulum has exactly one link".into()));
        }
        Ok(())
    }

    /// Canonical joint configuration at reset.
    pub fn home_position(&self) -> Vec<f64> {
        match self.kind {
            RobotKind::Pendulum => vec![-std::f64::consts::FRAC_PI_2],
            RobotKind::PlanarArm => self
                .joint_limits
                .iter()
                .enumerate()
                .map(|(i, &(lo, hi))| (if i == 0 { 0.0f64 } else { 0.6 }).clamp(lo, hi))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub position: Vec2<f64>,
    pub velocity: Vec2<f64>,
    pub radius: f64,
    pub mass: f64,
    pub color_index: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub time: f64,
    pub joint_pos: Vec<f64>,
    pub joint_vel: Vec<f64>,
    pub objects: Vec<ObjectState>,
    pub grasped_object: Option<usize>,
    pub rng_state: CounterRng,
}

impl SimState {
    /// Canonical pre-randomization state for an environment.
    pub fn canonical(cfg: &EnvConfig) -> Self {
        let r = &cfg.randomization;
        let center = (r.object_position_lo + r.object_position_hi) * 0.5;
        let objects = (0..cfg.task.n_objects)
            .map(|i| ObjectState {
                position: center,
                velocity: Vec2::zero(),
                radius: cfg.task.object_radius,
                mass: r.object_mass_range.0,
                color_index: (i % PALETTE_SIZE as usize) as u8,
            })
            .collect();
        let q = cfg.robot.home_position();
        Self {
            time: 0.0,
            joint_vel: vec![0.0; q.len()],
            joint_pos: q,
            objects,
            grasped_object: None,
            rng_state: CounterRng::new(cfg.seed, crate::rng::streams::SCENE),
        }
    }

    /// Flat dynamic-state vector used for replay discrepancy:
    /// `[time, q.., qdot.., (px, py, vx, vy) per object]`.
    pub fn state_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + 2 * self.joint_pos.len() + 4 * self.objects.len());
        v.push(self.time);
        v.extend_from_slice(&self.joint_pos);
        v.extend_from_slice(&self.joint_vel);
        for o in &self.objects {
            v.extend_from_slice(&[o.position.x, o.position.y, o.velocity.x, o.velocity.y]);
        }
        v
    }

    pub fn end_effector(&self, model: &RobotModelSpec) -> Vec2<f64> {
        end_effector(&model.link_lengths, &self.joint_pos)
    }
}

/// Joint frame positions of a planar chain: `frames[0]` is the origin,
/// `frames[k] = frames[k-1] + L_k (cos Σθ_1..k, sin Σθ_1..k)`, and the last
/// entry is the end effector.
pub fn forward_kinematics<T: Real>(links: &[T], joint_pos: &[T]) -> Result<Vec<Vec2<T>>, SimError> {
    if links.len() != joint_pos.len() {
        return Err(SimError::Dimension { expected: links.len(), got: joint_pos.len() });
    }
    let mut frames = Vec::with_capacity(links.len() + 1);
    let mut p = Vec2::zero();
    let mut angle = T::zero();
    frames.push(p);
    for (&l, &q) in links.iter().zip(joint_pos) {
        angle += q;
        p += Vec2::from_angle(angle) * l;
        frames.push(p);
    }
    Ok(frames)
}

/// End-effector position; panics only on dimension mismatch, which callers
/// inside the simulator rule out.
pub fn end_effector<T: Real>(links: &[T], joint_pos: &[T]) -> Vec2<T> {
    *forward_kinematics(links, joint_pos)
        .expect("joint dimension checked by caller")
        .last()
        .expect("origin frame always present")
}

/// Positional Jacobian `d(EE)/dθ` as a 2 × n row-major pair of rows.
pub fn jacobian<T: Real>(links: &[T], joint_pos: &[T]) -> (Vec<T>, Vec<T>) {
    let n = links.len();
    let mut jx = vec![T::zero(); n];
    let mut jy = vec![T::zero(); n];
    let mut angle = T::zero();
    for k in 0..n {
        angle += joint_pos[k];
        let (s, c) = angle.sin_cos();
        // Link k moves with every joint j <= k.
        for j in 0..=k {
            jx[j] -= links[k] * s;
            jy[j] += links[k] * c;
        }
    }
    (jx, jy)
}

fn check_command(state: &SimState, model: &RobotModelSpec, cmd: &RobotCommand) -> Result<(), SimError> {
    let n = model.joint_count();
    if cmd.values.len() != n {
        return Err(SimError::Dimension { expected: n, got: cmd.values.len() });
    }
    if state.joint_pos.len() != n || state.joint_vel.len() != n {
        return Err(SimError::Dimension { expected: n, got: state.joint_pos.len() });
    }
    if !cmd.is_finite() {
        return Err(SimError::NonFinite);
    }
    Ok(())
}

fn control_torque(mode: ControlMode, target: f64, q: f64, v: f64, limit: f64) -> f64 {
    match mode {
        ControlMode::Position => KP * (target - q) - KD * v,
        ControlMode::Velocity => KV * (target - v),
        ControlMode::Torque => target.clamp(-limit, limit),
    }
}

/// Discrete-gradient pendulum step. Returns `(θ', θ̇')`.
fn pendulum_step(theta: f64, omega: f64, torque: f64, length: f64, dt: f64) -> (f64, f64) {
    let inertia = length * length;
    let gl = GRAVITY * length;
    let b = PENDULUM_DAMPING;
    let denom = 1.0 + dt * b / (2.0 * inertia);
    let mut next = omega + dt * (torque - gl * theta.cos() - b * omega) / inertia;
    for _ in 0..64 {
        let theta_next = theta + dt * 0.5 * (omega + next);
        let mid = 0.5 * (theta + theta_next);
        let half = 0.5 * (theta_next - theta);
        // (sin θ' − sin θ) / (θ' − θ) without cancellation.
        let slope = mid.cos() * sinc(half);
        let candidate = (omega + dt / inertia * (torque - gl * slope - 0.5 * b * omega)) / denom;
        let done = (candidate - next).abs() <= 1e-15 * candidate.abs().max(1.0);
        next = candidate;
        if done {
            break;
        }
    }
    (theta + dt * 0.5 * (omega + next), next)
}

/// Total mechanical energy of a pendulum state (unit tip mass).
pub fn pendulum_energy(model: &RobotModelSpec, state: &SimState) -> f64 {
    let l = model.link_lengths[0];
    0.5 * l * l * state.joint_vel[0].powi(2) + GRAVITY * l * state.joint_pos[0].sin()
}

/// Advances the state by one physics step of `dt` seconds.
pub fn sim_step(
    state: &SimState,
    model: &RobotModelSpec,
    cmd: &RobotCommand,
    dt: f64,
) -> Result<SimState, SimError> {
    if !(dt > 0.0) {
        return Err(SimError::Timestep);
    }
    check_command(state, model, cmd)?;
    let mut next = state.clone();
    let links = &model.link_lengths;
    let ee_before = end_effector(links, &state.joint_pos);

    for j in 0..model.joint_count() {
        let (q, v) = (state.joint_pos[j], state.joint_vel[j]);
        let u = control_torque(cmd.mode, cmd.values[j], q, v, model.torque_limits[j]);
        let (mut q2, mut v2) = match model.kind {
            RobotKind::PlanarArm => {
                let v2 = v + dt * u;
                (q + dt * v2, v2)
            }
            RobotKind::Pendulum => pendulum_step(q, v, u, links[j], dt),
        };
        let (lo, hi) = model.joint_limits[j];
        if q2 <= lo {
            q2 = lo;
            v2 = v2.max(0.0);
        } else if q2 >= hi {
            q2 = hi;
            v2 = v2.min(0.0);
        }
        next.joint_pos[j] = q2;
        next.joint_vel[j] = v2;
    }

    let ee = end_effector(links, &next.joint_pos);
    let decay = 1.0 - DISC_DAMPING * dt;
    for (i, obj) in next.objects.iter_mut().enumerate() {
        if next.grasped_object == Some(i) {
            obj.position = ee;
            obj.velocity = (ee - ee_before) * (1.0 / dt);
            continue;
        }
        obj.velocity = obj.velocity * decay;
        obj.position += obj.velocity * dt;
        let offset = obj.position - ee;
        let dist = offset.norm();
        if dist < obj.radius {
            let normal = offset.normalized().unwrap_or(Vec2::new(1.0, 0.0));
            obj.position = ee + normal * obj.radius;
        }
    }
    next.time = state.time + dt;
    Ok(next)
}

/// Grasps the nearest disc whose center lies within the gripper radius of the
/// end effector (lowest index on ties). No-op if already holding a disc.
pub fn attempt_grasp(state: &SimState, model: &RobotModelSpec) -> SimState {
    let mut next = state.clone();
    if state.grasped_object.is_some() {
        return next;
    }
    let ee = state.end_effector(model);
    let mut best: Option<(usize, f64)> = None;
    for (i, obj) in state.objects.iter().enumerate() {
        let d = obj.position.dist(ee);
        if d <= model.gripper_radius && best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    if let Some((i, _)) = best {
        next.grasped_object = Some(i);
        next.objects[i].position = ee;
        next.objects[i].velocity = Vec2::zero();
    }
    next
}

pub fn release_grasp(state: &SimState) -> SimState {
    let mut next = state.clone();
    next.grasped_object = None;
    next
}

/// Applies the gripper request of a command.
pub fn apply_gripper(state: &SimState, model: &RobotModelSpec, gripper: Gripper) -> SimState {
    match gripper {
        Gripper::NoChange => state.clone(),
        Gripper::Grasp => attempt_grasp(state, model),
        Gripper::Release => release_grasp(state),
    }
}

/// Draws the scene layout. Draw order: every object's position (x then y)
/// by index, then every object's mass, then a Fisher-Yates shuffle of the
/// color indices when palette randomization is on.
pub fn randomize_scene(state: &SimState, spec: &RandomizationSpec, rng: &mut CounterRng) -> SimState {
    let mut next = state.clone();
    let (lo, hi) = (spec.object_position_lo, spec.object_position_hi);
    for obj in &mut next.objects {
        let x = rng.uniform_range(lo.x, hi.x);
        let y = rng.uniform_range(lo.y, hi.y);
        obj.position = Vec2::new(x, y);
        obj.velocity = Vec2::zero();
    }
    let (mlo, mhi) = spec.object_mass_range;
    for obj in &mut next.objects {
        obj.mass = rng.uniform_range(mlo, mhi);
    }
    if spec.scene_palette_randomize {
        let n = next.objects.len();
        for i in (1..n).rev() {
            let j = rng.below(i + 1);
            let ci = next.objects[i].color_index;
            next.objects[i].color_index = next.objects[j].color_index;
            next.objects[j].color_index = ci;
        }
    }
    next.grasped_object = None;
    next.rng_state = *rng;
    next
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, PI};

    use super::*;

    fn arm(links: &[f64]) -> RobotModelSpec {
        RobotModelSpec {
            kind: RobotKind::PlanarArm,
            link_lengths: links.to_vec(),
            joint_limits: vec![(-PI, PI); links.len()],
            torque_limits: vec![10.0; links.len()],
            gripper_radius: 0.05,
        }
    }

    fn pendulum() -> RobotModelSpec {
        RobotModelSpec {
            kind: RobotKind::Pendulum,
            link_lengths: vec![1.0],
            joint_limits: vec![(-100.0, 100.0)],
            torque_limits: vec![5.0],
            gripper_radius: 0.0,
        }
    }

    fn state(q: &[f64], objects: Vec<ObjectState>) -> SimState {
        SimState {
            time: 0.0,
            joint_pos: q.to_vec(),
            joint_vel: vec![0.0; q.len()],
            objects,
            grasped_object: None,
            rng_state: CounterRng::new(0, 0),
        }
    }

    fn disc(x: f64, y: f64) -> ObjectState {
        ObjectState {
            position: Vec2::new(x, y),
            velocity: Vec2::zero(),
            radius: 0.05,
            mass: 1.0,
            color_index: 0,
        }
    }

    #[test]
    fn fk_straight_and_rotated() {
        assert_eq!(end_effector(&[1.0, 1.0], &[0.0, 0.0]), Vec2::new(2.0, 0.0));
        let ee = end_effector(&[1.0, 1.0], &[FRAC_PI_2, 0.0]);
        assert!(ee.x.abs() < 1e-15 && (ee.y - 2.0).abs() < 1e-15);
        let frames = forward_kinematics(&[1.0f32, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(frames.len(), 3);
        assert_eq!(frames[0], Vec2::zero());
        assert!(forward_kinematics(&[1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let links = [0.8f64, 0.6, 0.4];
        let q = [0.3f64, -0.2, 0.5];
        let (jx, jy) = jacobian(&links, &q);
        let h = 1e-6;
        for j in 0..3 {
            let mut qp = q;
            let mut qm = q;
            qp[j] += h;
            qm[j] -= h;
            let d = (end_effector(&links, &qp) - end_effector(&links, &qm)) * (0.5 / h);
            assert!((d.x - jx[j]).abs() < 1e-8);
            assert!((d.y - jy[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn pendulum_equilibrium_is_stationary() {
        let model = pendulum();
        let s = state(&[-FRAC_PI_2], vec![]);
        let cmd = RobotCommand::new(ControlMode::Torque, vec![0.0]);
        let n = sim_step(&s, &model, &cmd, 0.01).unwrap();
        assert_eq!(n.time, 0.01);
        // -pi/2 is not exactly representable, so cos() leaves a ~6e-17 residue.
        assert!((n.joint_pos[0] - s.joint_pos[0]).abs() < 1e-15);
        assert!(n.joint_vel[0].abs() < 1e-15);
    }

    #[test]
    fn position_hold_is_fixed_point() {
        let model = arm(&[0.5, 0.4, 0.3]);
        let s = state(&[0.2, -0.4, 0.9], vec![]);
        let cmd = RobotCommand::new(ControlMode::Position, s.joint_pos.clone());
        let n = sim_step(&s, &model, &cmd, 0.01).unwrap();
        for (a, b) in n.joint_pos.iter().zip(&s.joint_pos) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn torque_is_clamped_and_limits_enforced() {
        let mut model = arm(&[1.0]);
        model.joint_limits = vec![(-0.1, 0.1)];
        let s = state(&[0.0], vec![]);
        let cmd = RobotCommand::new(ControlMode::Torque, vec![1e6]);
        let n = sim_step(&s, &model, &cmd, 0.01).unwrap();
        // Clamped to 10 N·m: v = 0.1, q = 0.001.
        assert!((n.joint_vel[0] - 0.1).abs() < 1e-15);
        let mut cur = n;
        for _ in 0..200 {
            cur = sim_step(&cur, &model, &cmd, 0.01).unwrap();
            assert!(cur.joint_pos[0] <= 0.1);
        }
        assert_eq!(cur.joint_pos[0], 0.1);
        assert_eq!(cur.joint_vel[0], 0.0);
    }

    #[test]
    fn rejects_bad_commands() {
        let model = arm(&[1.0, 1.0]);
        let s = state(&[0.0, 0.0], vec![]);
        let bad = RobotCommand::new(ControlMode::Torque, vec![f64::NAN, 0.0]);
        assert_eq!(sim_step(&s, &model, &bad, 0.01), Err(SimError::NonFinite));
        let short = RobotCommand::new(ControlMode::Torque, vec![0.0]);
        assert!(matches!(sim_step(&s, &model, &short, 0.01), Err(SimError::Dimension { .. })));
        let ok = RobotCommand::new(ControlMode::Torque, vec![0.0, 0.0]);
        assert_eq!(sim_step(&s, &model, &ok, 0.0), Err(SimError::Timestep));
    }

    #[test]
    fn grasp_rules() {
        let model = arm(&[1.0, 1.0]);
        // EE at (2, 0).
        let s = state(&[0.0, 0.0], vec![disc(2.0, 0.0)]);
        assert_eq!(attempt_grasp(&s, &model).grasped_object, Some(0));

        let far = state(&[0.0, 0.0], vec![disc(2.2, 0.0), disc(1.0, 1.0)]);
        assert_eq!(attempt_grasp(&far, &model), far);

        let tie = state(&[0.0, 0.0], vec![disc(3.0, 3.0), disc(2.0, 0.03), disc(2.0, -0.03)]);
        assert_eq!(attempt_grasp(&tie, &model).grasped_object, Some(1));

        let mut held = attempt_grasp(&s, &model);
        held.objects.push(disc(2.0, 0.0));
        assert_eq!(attempt_grasp(&held, &model).grasped_object, Some(0));
        assert_eq!(release_grasp(&held).grasped_object, None);
    }

    #[test]
    fn randomize_degenerate_box_and_determinism() {
        let spec = RandomizationSpec {
            object_position_lo: Vec2::new(0.3, -0.2),
            object_position_hi: Vec2::new(0.3, -0.2),
            object_mass_range: (0.5, 2.0),
            scene_palette_randomize: true,
        };
        let s = state(&[0.0], vec![disc(0.0, 0.0), disc(1.0, 1.0)]);
        let mut r1 = CounterRng::new(11, 2);
        let a = randomize_scene(&s, &spec, &mut r1);
        assert!(a.objects.iter().all(|o| o.position == Vec2::new(0.3, -0.2)));
        let mut r2 = CounterRng::new(11, 2);
        let b = randomize_scene(&s, &spec, &mut r2);
        assert_eq!(a, b);
        // 4 position draws + 2 mass draws + 1 shuffle draw.
        assert_eq!(r1.counter(), 7);
    }
}
