use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::ControlMode;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gripper {
    #[default]
    NoChange,
    Grasp,
    Release,
}

impl Gripper {
    pub fn code(self) -> u8 {
        match self {
            Gripper::NoChange => 0,
            Gripper::Grasp => 1,
            Gripper::Release => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Gripper::NoChange,
            1 => Gripper::Grasp,
            2 => Gripper::Release,
            _ => return None,
        })
    }
}

/// One actuation request: per-joint values in the units of `mode`
/// (rad, rad/s or N·m) plus a gripper request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotCommand {
    pub mode: ControlMode,
    pub values: Vec<f64>,
    pub gripper: Gripper,
}

impl RobotCommand {
    pub fn new(mode: ControlMode, values: Vec<f64>) -> Self {
        Self { mode, values, gripper: Gripper::NoChange }
    }

    pub fn with_gripper(mut self, gripper: Gripper) -> Self {
        self.gripper = gripper;
        self
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Row stored in trajectories: joint values followed by the gripper code.
    pub fn to_row(&self) -> Vec<f64> {
        let mut row = self.values.clone();
        row.push(f64::from(self.gripper.code()));
        row
    }

    pub fn from_row(mode: ControlMode, row: &[f64]) -> Option<Self> {
        let (last, values) = row.split_last()?;
        let code = *last as u8;
        if f64::from(code) != *last {
            return None;
        }
        Some(Self { mode, values: values.to_vec(), gripper: Gripper::from_code(code)? })
    }
}

/// Time-stamped sensor readings keyed by sensor name, in declaration order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub timestamp: f64,
    pub readings: Vec<(String, Vec<f64>)>,
}

impl SensorFrame {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.readings.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.readings.iter().map(|(n, _)| n.as_str())
    }

    pub fn into_map(self) -> BTreeMap<String, Vec<f64>> {
        self.readings.into_iter().collect()
    }
}
