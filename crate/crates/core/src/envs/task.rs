//! Dense rewards and success predicates. The two live in separate functions
//! that share no code path; success never reads a reward value.

use crate::config::{TaskKind, TaskSpec};
use crate::geom::Vec2;
use crate::num::wrap_angle;
use crate::robot::{RobotCommand, WorldView};
use crate::sim::RobotModelSpec;

/// Everything a reward function may look at for one step.
pub struct RewardInput<'a> {
    pub task: &'a TaskSpec,
    pub world: &'a WorldView,
    pub model: &'a RobotModelSpec,
    pub goal: &'a [f64],
    pub action: &'a RobotCommand,
}

fn goal_point(goal: &[f64]) -> Vec2<f64> {
    Vec2::new(goal[0], goal.get(1).copied().unwrap_or(0.0))
}

fn object0(world: &WorldView) -> Vec2<f64> {
    world.objects.first().map_or(Vec2::zero(), |o| o.position)
}

/// Reach: `-‖EE − goal‖`. Push/PickPlace: `-‖obj₀ − goal‖ − 0.5‖EE − obj₀‖`.
/// Pendulum: `-(angle error)² − 0.01 θ̇² − 0.001 u²`.
pub fn compute_reward(input: &RewardInput<'_>) -> f64 {
    let RewardInput { task, world, model, goal, action } = *input;
    match task.kind {
        TaskKind::Reach => -world.end_effector(model).dist(goal_point(goal)),
        TaskKind::Push | TaskKind::PickPlace => {
            let obj = object0(world);
            -obj.dist(goal_point(goal)) - 0.5 * world.end_effector(model).dist(obj)
        }
        TaskKind::PendulumSwingup => {
            let err = wrap_angle(world.joint_pos[0] - goal[0]);
            let u = action.values.first().copied().unwrap_or(0.0);
            -err * err - 0.01 * world.joint_vel[0].powi(2) - 0.001 * u * u
        }
    }
}

/// Strict-inequality success predicates.
pub fn compute_success(task: &TaskSpec, world: &WorldView, model: &RobotModelSpec, goal: &[f64]) -> bool {
    match task.kind {
        TaskKind::Reach => world.end_effector(model).dist(goal_point(goal)) < task.success_radius,
        TaskKind::Push => object0(world).dist(goal_point(goal)) < task.success_radius,
        TaskKind::PickPlace => {
            let (Some(center), Some(radius)) = (task.bin_center, task.bin_radius) else {
                return false;
            };
            !world.objects.is_empty()
                && world.grasped_object != Some(0)
                && object0(world).dist(center) < radius
        }
        TaskKind::PendulumSwingup => {
            wrap_angle(world.joint_pos[0] - goal[0]).abs() < task.success_radius
                && world.joint_vel[0].abs() < 1.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ControlMode;
    use crate::robot::ObjectView;
    use crate::sim::RobotKind;

    fn model() -> RobotModelSpec {
        RobotModelSpec {
            kind: RobotKind::PlanarArm,
            link_lengths: vec![0.5, 0.5],
            joint_limits: vec![(-3.0, 3.0); 2],
            torque_limits: vec![10.0; 2],
            gripper_radius: 0.05,
        }
    }

    fn task(kind: TaskKind) -> TaskSpec {
        TaskSpec {
            kind,
            target: vec![0.0, 0.0],
            success_radius: 0.1,
            goal_randomize: false,
            goal_range: None,
            bin_center: Some(Vec2::new(1.0, 0.0)),
            bin_radius: Some(0.2),
            success_latch: 5,
            n_objects: 1,
            object_radius: 0.05,
        }
    }

    fn world(objects: Vec<Vec2<f64>>) -> WorldView {
        // EE at (1, 0).
        WorldView {
            time: 0.0,
            joint_pos: vec![0.0, 0.0],
            joint_vel: vec![0.0, 0.0],
            objects: objects
                .into_iter()
                .map(|p| ObjectView { position: p, radius: 0.05, color_index: 0 })
                .collect(),
            grasped_object: None,
        }
    }

    fn reward(kind: TaskKind, w: &WorldView, goal: &[f64]) -> f64 {
        let t = task(kind);
        let m = model();
        let a = RobotCommand::new(ControlMode::Position, vec![0.0, 0.0]);
        compute_reward(&RewardInput { task: &t, world: w, model: &m, goal, action: &a })
    }

    #[test]
    fn reach_reward_values() {
        let w = world(vec![]);
        assert_eq!(reward(TaskKind::Reach, &w, &[1.0, 0.0]), 0.0);
        assert_eq!(reward(TaskKind::Reach, &w, &[0.0, 0.0]), -1.0);
    }

    #[test]
    fn push_reward_zero_at_goal() {
        let w = world(vec![Vec2::new(1.0, 0.0)]);
        assert_eq!(reward(TaskKind::Push, &w, &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn success_boundary_is_strict() {
        let m = model();
        let mut t = task(TaskKind::Reach);
        let w = world(vec![]);
        t.success_radius = 0.25;
        // EE (1,0) to goal (0.75,0) is exactly 0.25.
        assert!(!compute_success(&t, &w, &m, &[0.75, 0.0]));
        t.success_radius = 0.250001;
        assert!(compute_success(&t, &w, &m, &[0.75, 0.0]));
    }

    #[test]
    fn pick_place_requires_release() {
        let m = model();
        let t = task(TaskKind::PickPlace);
        let mut w = world(vec![Vec2::new(1.0, 0.05)]);
        assert!(compute_success(&t, &w, &m, &[1.0, 0.0]));
        w.grasped_object = Some(0);
        assert!(!compute_success(&t, &w, &m, &[1.0, 0.0]));
    }
}
