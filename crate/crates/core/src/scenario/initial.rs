//! Randomized, settled initial states.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::terrain::Terrain;
use crate::error::{Error, Result};
use crate::sim::engine::{place_robot, simulate, DEFAULT_DT};
use crate::sim::model::{RobotModel, NUM_CABLES, NUM_FACES};
use crate::sim::{ControlCommand, FullState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialStateConfig {
    /// Distance kept from the terrain border when drawing locations (m).
    pub margin: f64,
    /// Relative half-width of the uniform rest-length perturbation.
    pub shape_perturbation: f64,
    pub settle_time: f64,
    pub max_attempts: usize,
    /// Allowed node depth below the terrain after settling (m).
    pub penetration_tolerance: f64,
}

impl Default for InitialStateConfig {
    fn default() -> Self {
        Self {
            margin: 10.0,
            shape_perturbation: 0.1,
            settle_time: 2.0,
            max_attempts: 5,
            penetration_tolerance: 0.02,
        }
    }
}

/// Draws `n` states with random location, yaw, bottom face and shape, each
/// settled for `settle_time` under its own rest lengths. State `k` depends only
/// on `(seed, k)`.
pub fn sample_initial_states(
    n: usize,
    seed: u64,
    terrain: &Terrain,
    model: &RobotModel,
    cfg: &InitialStateConfig,
) -> Result<Vec<FullState>> {
    if n == 0 {
        return Err(Error::InvalidParameter { name: "n", reason: "need at least one state".into() });
    }
    (0..n)
        .into_par_iter()
        .map(|k| sample_one(k as u64, seed, terrain, model, cfg))
        .collect()
}

fn sample_one(k: u64, seed: u64, terrain: &Terrain, model: &RobotModel, cfg: &InitialStateConfig) -> Result<FullState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    let (ex, ey) = terrain.extent();
    let (cx, cy) = terrain.center();
    let (hx, hy) = ((ex / 2.0 - cfg.margin).max(0.0), (ey / 2.0 - cfg.margin).max(0.0));
    let mut last_err = None;
    for _ in 0..cfg.max_attempts.max(1) {
        let xy = (cx + rng.random_range(-hx..=hx), cy + rng.random_range(-hy..=hy));
        let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let face = rng.random_range(0..NUM_FACES);
        let rest: [f64; NUM_CABLES] = std::array::from_fn(|_| {
            let f = 1.0 + rng.random_range(-cfg.shape_perturbation..=cfg.shape_perturbation);
            model.clamp_rest_length(model.neutral_rest_length * f)
        });
        let placed = place_robot(model, terrain, face, xy, yaw, rest, 0.005);
        let cmd = ControlCommand { target_rest_lengths: rest };
        match simulate(&placed, &cmd, model, terrain, DEFAULT_DT, cfg.settle_time) {
            Ok(mut s) => {
                let depth = max_penetration(&s, terrain);
                if depth <= cfg.penetration_tolerance {
                    s.sim_time = 0.0;
                    return Ok(s);
                }
                last_err = Some(Error::SettleFailure { time: cfg.settle_time, energy: s.kinetic_energy(model) });
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

/// Deepest node penetration below the terrain surface (m), zero if none.
pub fn max_penetration(state: &FullState, terrain: &Terrain) -> f64 {
    state
        .node_pos
        .iter()
        .map(|p| terrain.height(p.x, p.y) - p.z)
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_above_ground() {
        let m = RobotModel::default_model();
        let t = Terrain::ramp(8.0);
        let cfg = InitialStateConfig::default();
        let a = sample_initial_states(4, 7, &t, &m, &cfg).unwrap();
        let b = sample_initial_states(4, 7, &t, &m, &cfg).unwrap();
        assert_eq!(a, b);
        for s in &a {
            s.validate(&m).unwrap();
            assert!(max_penetration(s, &t) <= cfg.penetration_tolerance);
            assert_eq!(s.sim_time, 0.0);
        }
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn rejects_zero_count() {
        let m = RobotModel::default_model();
        assert!(sample_initial_states(0, 1, &Terrain::flat(), &m, &InitialStateConfig::default()).is_err());
    }
}
