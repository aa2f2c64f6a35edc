//! Linear behavior cloning by ridge regression.
//!
//! Model file (little-endian):
//! `"RBC1" | u32 action_dim | u32 n_features | u8 control mode | u16 n_keys
//! | n_keys × {u8 name_len, name, u32 dim} | W row-major (f64) | f64 λ`.
//! `n_features` counts the trailing bias feature.

use std::io::{Read, Write};
use std::path::Path;

use super::{nearest_gripper, obs_get, state_sensor_keys, AgentError, Policy, PolicyDescriptor};
use crate::config::{ControlMode, EnvConfig};
use crate::dataset::{ContainerReader, Trajectory};
use crate::envs::Observation;
use crate::linalg::{Matrix, NormalEquations};
use crate::rng::CounterRng;
use crate::robot::RobotCommand;

const MODEL_MAGIC: &[u8; 4] = b"RBC1";

/// `action = W · [obs features, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearBCModel {
    /// `action_dim × (obs_dim + 1)`.
    pub w: Matrix<f64>,
    /// Observation keys and widths, in feature order.
    pub keys: Vec<(String, usize)>,
    pub lambda: f64,
    pub mode: ControlMode,
}

impl LinearBCModel {
    pub fn obs_dim(&self) -> usize {
        self.keys.iter().map(|(_, d)| d).sum()
    }

    pub fn action_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn features(&self, obs: &Observation) -> Result<Vec<f64>, AgentError> {
        let mut x = Vec::with_capacity(self.obs_dim() + 1);
        for (k, dim) in &self.keys {
            let v = obs_get(obs, k)?;
            if v.len() != *dim {
                return Err(AgentError::InvalidModel(format!("'{k}' has {} values, model expects {dim}", v.len())));
            }
            x.extend_from_slice(v);
        }
        x.push(1.0);
        Ok(x)
    }

    pub fn predict(&self, features: &[f64]) -> Result<Vec<f64>, AgentError> {
        Ok(self.w.mul_vec(features)?)
    }

    /// `Σ ‖y − W x‖² + λ ‖W‖²_F` over every step of `trajs`.
    pub fn training_loss(&self, trajs: &[Trajectory]) -> Result<f64, AgentError> {
        let mut loss = 0.0;
        for_each_sample(trajs, &self.keys, |x, y| {
            let p = self.w.mul_vec(x)?;
            loss += p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            Ok(())
        })?;
        Ok(loss + self.lambda * self.w.as_slice().iter().map(|v| v * v).sum::<f64>())
    }
}

fn for_each_sample(
    trajs: &[Trajectory],
    keys: &[(String, usize)],
    mut f: impl FnMut(&[f64], &[f64]) -> Result<(), AgentError>,
) -> Result<(), AgentError> {
    let mut x = Vec::new();
    for t in trajs {
        let series = keys
            .iter()
            .map(|(k, dim)| match t.observation(k) {
                Some(s) if s.dim == *dim => Ok(s),
                _ => Err(AgentError::InvalidModel(format!("trajectory lacks observation '{k}' of width {dim}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        for step in 0..t.len() {
            x.clear();
            for s in &series {
                x.extend_from_slice(s.row(step));
            }
            x.push(1.0);
            f(&x, t.actions.row(step))?;
        }
    }
    Ok(())
}

/// Fits `W` on every (features, action) pair of the container, using all
/// non-camera sensors as features.
pub fn train_bc(dataset: &ContainerReader, lambda: f64) -> Result<LinearBCModel, AgentError> {
    let cfg = dataset.config();
    let trajs = dataset.read_all()?;
    let first = trajs.first().ok_or(AgentError::EmptyDataset)?;
    let keys = state_sensor_keys(cfg)
        .into_iter()
        .filter_map(|k| first.observation(&k).map(|s| (k, s.dim)))
        .collect();
    train_bc_from(&trajs, keys, cfg.control_mode, lambda)
}

/// Solves `(XᵀX + λI) Wᵀ = XᵀY` by Cholesky factorization.
pub fn train_bc_from(
    trajs: &[Trajectory],
    keys: Vec<(String, usize)>,
    mode: ControlMode,
    lambda: f64,
) -> Result<LinearBCModel, AgentError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(AgentError::InvalidModel(format!("ridge coefficient must be positive, got {lambda}")));
    }
    let first = trajs.iter().find(|t| !t.is_empty()).ok_or(AgentError::EmptyDataset)?;
    let action_dim = first.actions.dim;
    if trajs.iter().any(|t| t.actions.dim != action_dim) {
        return Err(AgentError::InvalidModel("trajectories disagree on the action dimension".into()));
    }
    let n_features = keys.iter().map(|(_, d)| d).sum::<usize>() + 1;
    let mut ne = NormalEquations::new(n_features, action_dim);
    for_each_sample(trajs, &keys, |x, y| Ok(ne.push(x, y)?))?;
    let w = ne.solve_ridge(lambda)?;
    if !w.is_finite() {
        return Err(AgentError::InvalidModel("non-finite weights".into()));
    }
    Ok(LinearBCModel { w, keys, lambda, mode })
}

pub fn save_bc_model(model: &LinearBCModel, path: &Path) -> Result<(), AgentError> {
    let mut b = Vec::new();
    b.extend_from_slice(MODEL_MAGIC);
    b.extend_from_slice(&(model.w.rows() as u32).to_le_bytes());
    b.extend_from_slice(&(model.w.cols() as u32).to_le_bytes());
    b.push(model.mode.code());
    b.extend_from_slice(&(model.keys.len() as u16).to_le_bytes());
    for (k, d) in &model.keys {
        let len = u8::try_from(k.len()).map_err(|_| AgentError::InvalidModel(format!("key '{k}' too long")))?;
        b.push(len);
        b.extend_from_slice(k.as_bytes());
        b.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for v in model.w.as_slice() {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b.extend_from_slice(&model.lambda.to_le_bytes());
    std::fs::File::create(path)?.write_all(&b)?;
    Ok(())
}

pub fn load_bc_model(path: &Path) -> Result<LinearBCModel, AgentError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 4 || &buf[..4] != MODEL_MAGIC {
        return Err(AgentError::NotAModel);
    }
    let mut pos = 4;
    let mut take = |n: usize| -> Result<&[u8], AgentError> {
        let s = buf.get(pos..pos + n).ok_or_else(|| AgentError::InvalidModel("truncated model file".into()))?;
        pos += n;
        Ok(s)
    };
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes")) as usize;
    let rows = u32_at(take(4)?);
    let cols = u32_at(take(4)?);
    let code = take(1)?[0];
    let mode = ControlMode::from_code(code).ok_or_else(|| AgentError::InvalidModel(format!("control mode {code}")))?;
    let n_keys = u16::from_le_bytes(take(2)?.try_into().expect("2 bytes")) as usize;
    let mut keys = Vec::with_capacity(n_keys);
    for _ in 0..n_keys {
        let len = take(1)?[0] as usize;
        let name = String::from_utf8(take(len)?.to_vec()).map_err(|_| AgentError::InvalidModel("key is not UTF-8".into()))?;
        keys.push((name, u32_at(take(4)?)));
    }
    if keys.iter().map(|(_, d)| d).sum::<usize>() + 1 != cols {
        return Err(AgentError::InvalidModel("key widths do not match the feature count".into()));
    }
    let count = rows.checked_mul(cols).ok_or_else(|| AgentError::InvalidModel("dimension overflow".into()))?;
    let raw = take(count.checked_mul(8).ok_or_else(|| AgentError::InvalidModel("dimension overflow".into()))?)?;
    let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let lambda = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
    if pos != buf.len() {
        return Err(AgentError::InvalidModel("trailing bytes".into()));
    }
    if !(lambda > 0.0) || data.iter().any(|v| !v.is_finite()) {
        return Err(AgentError::InvalidModel("non-finite weights or non-positive λ".into()));
    }
    Ok(LinearBCModel { w: Matrix::from_row_major(rows, cols, data)?, keys, lambda, mode })
}

/// A trained model bound to an environment.
pub struct BcPolicy {
    model: LinearBCModel,
    env_id: String,
    n_joints: usize,
}

impl BcPolicy {
    pub fn new(model: LinearBCModel, cfg: &EnvConfig) -> Result<Self, AgentError> {
        if model.mode != cfg.control_mode {
            return Err(AgentError::InvalidModel(format!(
                "model emits {:?} commands, environment expects {:?}",
                model.mode, cfg.control_mode
            )));
        }
        let n_joints = cfg.joint_count();
        if model.action_dim() != n_joints + 1 {
            return Err(AgentError::InvalidModel(format!(
                "model has {} outputs, environment needs {} joints plus gripper",
                model.action_dim(),
                n_joints
            )));
        }
        for (k, _) in &model.keys {
            if !cfg.sensor_names().any(|n| n == k) {
                return Err(AgentError::InvalidModel(format!("environment has no sensor '{k}'")));
            }
        }
        Ok(Self { model, env_id: cfg.env_id.clone(), n_joints })
    }

    pub fn model(&self) -> &LinearBCModel {
        &self.model
    }
}

impl Policy for BcPolicy {
    fn act(&self, obs: &Observation, _rng: &mut CounterRng) -> Result<RobotCommand, AgentError> {
        let y = self.model.predict(&self.model.features(obs)?)?;
        let cmd = RobotCommand::new(self.model.mode, y[..self.n_joints].to_vec());
        Ok(cmd.with_gripper(nearest_gripper(y[self.n_joints])))
    }

    fn descriptor(&self) -> PolicyDescriptor {
        PolicyDescriptor {
            kind: "bc".into(),
            env_id: self.env_id.clone(),
            obs_keys: self.model.keys.iter().map(|(k, _)| k.clone()).collect(),
        }
    }
}
