use serde::{Deserialize, Serialize};

use super::model::{RobotModel, Vec3, NUM_CABLES, NUM_NODES};
use crate::error::{Error, Result};

/// Complete simulator state: node kinematics plus the current cable rest lengths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullState {
    pub node_pos: [Vec3; NUM_NODES],
    pub node_vel: [Vec3; NUM_NODES],
    pub rest_lengths: [f64; NUM_CABLES],
    pub sim_time: f64,
}

impl FullState {
    /// Neutral geometry at rest with the neutral rest lengths.
    pub fn neutral(model: &RobotModel) -> Self {
        let mut node_pos = [Vec3::zeros(); NUM_NODES];
        node_pos.copy_from_slice(&model.node_positions_neutral);
        Self {
            node_pos,
            node_vel: [Vec3::zeros(); NUM_NODES],
            rest_lengths: [model.neutral_rest_length; NUM_CABLES],
            sim_time: 0.0,
        }
    }

    pub fn com(&self) -> Vec3 {
        self.node_pos.iter().sum::<Vec3>() / NUM_NODES as f64
    }

    pub fn com_velocity(&self) -> Vec3 {
        self.node_vel.iter().sum::<Vec3>() / NUM_NODES as f64
    }

    pub fn kinetic_energy(&self, model: &RobotModel) -> f64 {
        0.5 * model.params.node_mass * self.node_vel.iter().map(|v| v.norm_squared()).sum::<f64>()
    }

    /// Rejects NaN/Inf entries and rest lengths outside the model bounds.
    pub fn validate(&self, model: &RobotModel) -> Result<()> {
        for (n, (p, v)) in self.node_pos.iter().zip(&self.node_vel).enumerate() {
            if !(p.iter().all(|x| x.is_finite()) && v.iter().all(|x| x.is_finite())) {
                return Err(Error::NonFiniteState(format!("node {n}")));
            }
        }
        let (lo, hi) = model.rest_length_bounds;
        let tol = 1e-12 * hi;
        for (c, &r) in self.rest_lengths.iter().enumerate() {
            if !r.is_finite() {
                return Err(Error::NonFiniteState(format!("rest length {c}")));
            }
            if r < lo - tol || r > hi + tol {
                return Err(Error::InvalidParameter {
                    name: "rest_lengths",
                    reason: format!("cable {c} rest length {r} outside [{lo}, {hi}]"),
                });
            }
        }
        if !self.sim_time.is_finite() {
            return Err(Error::NonFiniteState("sim_time".into()));
        }
        Ok(())
    }
}

/// Desired cable rest lengths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlCommand {
    pub target_rest_lengths: [f64; NUM_CABLES],
}

impl ControlCommand {
    pub fn uniform(length: f64) -> Self {
        Self { target_rest_lengths: [length; NUM_CABLES] }
    }

    pub fn neutral(model: &RobotModel) -> Self {
        Self::uniform(model.neutral_rest_length)
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != NUM_CABLES {
            return Err(Error::DimensionMismatch { expected: NUM_CABLES, got: values.len() });
        }
        let mut target_rest_lengths = [0.0; NUM_CABLES];
        target_rest_lengths.copy_from_slice(values);
        Ok(Self { target_rest_lengths })
    }

    pub fn clamped(mut self, model: &RobotModel) -> Self {
        for v in &mut self.target_rest_lengths {
            *v = model.clamp_rest_length(*v);
        }
        self
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.target_rest_lengths
    }
}
