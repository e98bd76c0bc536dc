//! Reduced observation fed to the global policy.
//!
//! Layout (47 entries): Δ flag (1.0 for Δ, 0.0 for Λ), 24 canonical rest
//! lengths, 6×3 canonical bar angular velocities, (sin, cos) of the target
//! heading, (sin, cos) of the CoM ground-track heading.

use crate::error::Result;
use crate::sim::model::{FaceKind, RobotModel, Vec3, NUM_CABLES};
use crate::sim::FullState;

use super::{canonicalize_state, ReductionFrame, Symmetry};

pub const OBS_DIM: usize = 1 + NUM_CABLES + 18 + 2 + 2;

/// Horizontal speeds below this have no defined track and encode as (0, 0).
pub const TRACK_SPEED_FLOOR: f64 = 1e-6;

pub fn reduce_observation(
    sym: &Symmetry,
    model: &RobotModel,
    state: &FullState,
    frame: &ReductionFrame,
    target_dir: Vec3,
) -> Result<Vec<f64>> {
    let canon = canonicalize_state(sym, state, frame);
    let rates = crate::sim::bar_angular_velocities(&canon, model)?;
    let g = frame.transform();

    let mut y = Vec::with_capacity(OBS_DIM);
    y.push(if frame.kind(model) == FaceKind::Delta { 1.0 } else { 0.0 });
    y.extend_from_slice(&canon.rest_lengths);
    for w in &rates {
        y.extend_from_slice(w.as_slice());
    }
    y.extend(unit_sin_cos(g * target_dir, 0.0));
    y.extend(unit_sin_cos(canon.com_velocity(), TRACK_SPEED_FLOOR));
    debug_assert_eq!(y.len(), OBS_DIM);
    Ok(y)
}

/// Ground-plane heading (rad) of the CoM velocity, if it is moving.
pub fn track_heading(state: &FullState) -> Option<f64> {
    let v = state.com_velocity();
    (v.x.hypot(v.y) >= TRACK_SPEED_FLOOR).then(|| v.y.atan2(v.x))
}

fn unit_sin_cos(v: Vec3, floor: f64) -> [f64; 2] {
    let n = v.x.hypot(v.y);
    if n <= floor || n == 0.0 {
        [0.0, 0.0]
    } else {
        [v.y / n, v.x / n]
    }
}
