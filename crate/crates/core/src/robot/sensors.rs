//! Ground-truth world view and the per-sensor delay/noise pipeline shared by
//! every backend.

use std::collections::VecDeque;

use crate::config::{SensorKind, SensorSpec};
use crate::geom::Vec2;
use crate::rng::{streams, CounterRng};
use crate::sim::{forward_kinematics, RobotModelSpec, SimState};

use super::camera::{CameraView, DiscShape};
use super::SensorFrame;

/// What a backend reports about one object.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectView {
    pub position: Vec2<f64>,
    pub radius: f64,
    pub color_index: u8,
}

/// Ground truth a backend exposes after each step.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldView {
    pub time: f64,
    pub joint_pos: Vec<f64>,
    pub joint_vel: Vec<f64>,
    pub objects: Vec<ObjectView>,
    pub grasped_object: Option<usize>,
}

impl WorldView {
    pub fn from_state(s: &SimState) -> Self {
        Self {
            time: s.time,
            joint_pos: s.joint_pos.clone(),
            joint_vel: s.joint_vel.clone(),
            objects: s
                .objects
                .iter()
                .map(|o| ObjectView { position: o.position, radius: o.radius, color_index: o.color_index })
                .collect(),
            grasped_object: s.grasped_object,
        }
    }

    pub fn end_effector(&self, model: &RobotModelSpec) -> Vec2<f64> {
        crate::sim::end_effector(&model.link_lengths, &self.joint_pos)
    }
}

/// Computes the noiseless reading of one sensor.
pub fn true_reading(
    spec: &SensorSpec,
    model: &RobotModelSpec,
    world: &WorldView,
    goal: &[f64],
    scratch: &mut Vec<f64>,
) {
    scratch.clear();
    match spec.kind {
        SensorKind::JointPos => scratch.extend_from_slice(&world.joint_pos),
        SensorKind::JointVel => scratch.extend_from_slice(&world.joint_vel),
        SensorKind::Proprio => {
            scratch.extend_from_slice(&world.joint_pos);
            scratch.extend_from_slice(&world.joint_vel);
        }
        SensorKind::EndEffectorPos => {
            scratch.extend_from_slice(&world.end_effector(model).to_array());
        }
        SensorKind::ObjectPose => {
            for o in &world.objects {
                scratch.extend_from_slice(&o.position.to_array());
            }
        }
        SensorKind::Goal => scratch.extend_from_slice(goal),
        SensorKind::GridCamera => {
            let (w, h) = spec.camera_resolution.expect("validated: camera has resolution");
            let view = CameraView::new(w, h, model.reach());
            let frames = forward_kinematics(&model.link_lengths, &world.joint_pos)
                .expect("validated joint dimension");
            let discs: Vec<DiscShape> = world
                .objects
                .iter()
                .map(|o| DiscShape { center: o.position, radius: o.radius, color_index: o.color_index })
                .collect();
            view.render_into(&frames, &discs, scratch);
        }
    }
}

/// Per-sensor delay buffers plus the seeded noise stream.
///
/// Every call to [`SensorPipeline::process`] is one tick: the true reading
/// enters the sensor's ring buffer, the reading from `delay_steps` ticks ago
/// (or the oldest one held, right after a reset) leaves it, and Gaussian
/// noise is added once per sensor per tick.
#[derive(Clone, Debug)]
pub struct SensorPipeline {
    sensors: Vec<SensorSpec>,
    buffers: Vec<VecDeque<Vec<f64>>>,
    noise: CounterRng,
    noise_enabled: bool,
    scratch: Vec<f64>,
}

impl SensorPipeline {
    pub fn new(sensors: Vec<SensorSpec>) -> Self {
        let buffers = sensors.iter().map(|s| VecDeque::with_capacity(s.delay_steps + 1)).collect();
        Self {
            sensors,
            buffers,
            noise: CounterRng::new(0, streams::NOISE),
            noise_enabled: true,
            scratch: Vec::new(),
        }
    }

    pub fn sensors(&self) -> &[SensorSpec] {
        &self.sensors
    }

    /// Clears all delay buffers and reseeds the noise stream for an episode.
    pub fn reset(&mut self, episode_seed: u64) {
        for b in &mut self.buffers {
            b.clear();
        }
        self.noise = CounterRng::new(episode_seed, streams::NOISE);
    }

    pub fn set_noise_enabled(&mut self, on: bool) {
        self.noise_enabled = on;
    }

    pub fn process(&mut self, model: &RobotModelSpec, world: &WorldView, goal: &[f64]) -> SensorFrame {
        let mut readings = Vec::with_capacity(self.sensors.len());
        for (spec, buf) in self.sensors.iter().zip(&mut self.buffers) {
            true_reading(spec, model, world, goal, &mut self.scratch);
            // Recycle the evicted allocation when the buffer is full.
            let mut slot = if buf.len() > spec.delay_steps {
                buf.pop_front().unwrap_or_default()
            } else {
                Vec::new()
            };
            slot.clear();
            slot.extend_from_slice(&self.scratch);
            buf.push_back(slot);
            let mut out = buf.front().cloned().unwrap_or_default();
            if self.noise_enabled && spec.noise_sigma > 0.0 {
                for v in &mut out {
                    *v += spec.noise_sigma * self.noise.normal();
                }
                if spec.kind == SensorKind::GridCamera {
                    for v in &mut out {
                        *v = v.clamp(0.0, 1.0);
                    }
                }
            }
            readings.push((spec.name.clone(), out));
        }
        SensorFrame { timestamp: world.time, readings }
    }
}
