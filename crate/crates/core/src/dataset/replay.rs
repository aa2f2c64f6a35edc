//! Replay verification: re-execute a trajectory's actions from its stored
//! initial state and measure the discrepancy against the recorded states.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{config_digest, hex, ContainerReader, DatasetError, Trajectory, META_CONFIG_DIGEST};
use crate::config::{Backend, EnvConfig};
use crate::envs::Env;
use crate::robot::RobotCommand;
use crate::JSON_SCHEMA_VERSION;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub steps: usize,
    /// L2 norm between the replayed and recorded terminal state vectors.
    pub final_state_diff: f64,
    /// Largest per-step L2 state discrepancy.
    pub per_step_max_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    /// Exclusive lower edge (`None` for the exact-zero bin).
    pub lower: Option<f64>,
    /// Inclusive upper edge (`None` for the open top bin).
    pub upper: Option<f64>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplaySummary {
    pub schema_version: u32,
    pub env_id: String,
    pub n_trajectories: usize,
    pub max_final_state_diff: f64,
    pub max_per_step_diff: f64,
    pub histogram: Vec<HistogramBin>,
    pub trajectories: Vec<ReplayReport>,
}

const EDGES: [f64; 5] = [1e-15, 1e-12, 1e-9, 1e-6, 1e-3];

fn histogram(values: impl Iterator<Item = f64>) -> Vec<HistogramBin> {
    let mut bins = vec![HistogramBin { lower: None, upper: Some(0.0), count: 0 }];
    let mut lower = 0.0;
    for e in EDGES {
        bins.push(HistogramBin { lower: Some(lower), upper: Some(e), count: 0 });
        lower = e;
    }
    bins.push(HistogramBin { lower: Some(lower), upper: None, count: 0 });
    for v in values {
        let slot = if v == 0.0 {
            0
        } else {
            1 + EDGES.iter().position(|&e| v <= e).unwrap_or(EDGES.len())
        };
        bins[slot].count += 1;
    }
    bins
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Replays one trajectory with sensor noise disabled.
pub fn replay_trajectory(traj: &Trajectory, cfg: &EnvConfig) -> Result<ReplayReport, DatasetError> {
    if cfg.backend != Backend::Sim {
        return Err(DatasetError::Replay("replay requires backend = sim".into()));
    }
    if traj.env_id != cfg.env_id {
        return Err(DatasetError::MixedEnv { expected: cfg.env_id.clone(), got: traj.env_id.clone() });
    }
    if let Some(d) = traj.metadata.get(META_CONFIG_DIGEST) {
        if *d != hex(&config_digest(cfg)) {
            return Err(DatasetError::DigestMismatch);
        }
    }
    traj.validate()?;
    let n_joints = cfg.joint_count();
    if traj.actions.dim != n_joints + 1 {
        return Err(DatasetError::Replay(format!(
            "action dimension {} does not match {} joints plus gripper",
            traj.actions.dim, n_joints
        )));
    }
    if traj.len() > cfg.horizon as usize {
        return Err(DatasetError::Replay(format!("{} steps exceed the horizon of {}", traj.len(), cfg.horizon)));
    }
    let goal = traj.goal().unwrap_or_else(|| cfg.task.target.clone());
    let mut env = Env::new(Arc::new(cfg.clone()))?;
    env.robot_mut().set_noise_enabled(false);
    env.reset_to_state(&traj.initial_state, goal, traj.seed)?;
    let mut per_step_max_diff: f64 = 0.0;
    let mut final_state_diff = 0.0;
    for (t, row) in traj.actions.rows().enumerate() {
        let cmd = RobotCommand::from_row(cfg.control_mode, row)
            .ok_or_else(|| DatasetError::Replay(format!("step {t}: invalid gripper code")))?;
        env.step(&cmd)?;
        let state = env.snapshot().expect("sim backend has state").state_vector();
        let d = l2_diff(&state, traj.states.row(t));
        per_step_max_diff = per_step_max_diff.max(d);
        final_state_diff = d;
    }
    Ok(ReplayReport { steps: traj.len(), final_state_diff, per_step_max_diff })
}

/// Replays every trajectory of a container. When `expected` is given, its
/// digest must equal the container's.
pub fn replay_container(reader: &ContainerReader, expected: Option<&EnvConfig>) -> Result<ReplaySummary, DatasetError> {
    if let Some(cfg) = expected {
        if config_digest(cfg) != reader.digest() {
            return Err(DatasetError::DigestMismatch);
        }
    }
    let cfg = reader.config();
    let reports = reader
        .read_all()?
        .iter()
        .map(|t| replay_trajectory(t, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(&cfg.env_id, reports))
}

pub(crate) fn summarize(env_id: &str, reports: Vec<ReplayReport>) -> ReplaySummary {
    ReplaySummary {
        schema_version: JSON_SCHEMA_VERSION,
        env_id: env_id.to_owned(),
        n_trajectories: reports.len(),
        max_final_state_diff: reports.iter().map(|r| r.final_state_diff).fold(0.0, f64::max),
        max_per_step_diff: reports.iter().map(|r| r.per_step_max_diff).fold(0.0, f64::max),
        histogram: histogram(reports.iter().map(|r| r.final_state_diff)),
        trajectories: reports,
    }
}

impl ReplaySummary {
    /// Text rendering of the final-state histogram.
    pub fn histogram_text(&self) -> String {
        let mut out = String::from("final_state_diff histogram\n");
        for b in &self.histogram {
            let label = match (b.lower, b.upper) {
                (None, _) => "== 0".to_owned(),
                (Some(l), Some(u)) => format!("({l:e}, {u:e}]"),
                (Some(l), None) => format!("> {l:e}"),
            };
            out.push_str(&format!("  {label:<18} {}\n", b.count));
        }
        out
    }
}
