//! Waypoint schedule and the velocity-tracking running cost.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::sim::model::Vec3;

pub const NUM_WAYPOINTS: usize = 5;
pub const WAYPOINT_TIMEOUT: f64 = 5.0;
pub const TARGET_SPEED: f64 = 0.8;

/// Diagonal of the cost weight matrix `W`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostWeights(pub [f64; 3]);

impl Default for CostWeights {
    fn default() -> Self {
        Self([1.0, 1.0, 0.1])
    }
}

/// `(v - v* d)ᵀ W (v - v* d)` with `v` the first three entries of the reduced state.
pub fn running_cost(reduced: &[f64], dir: Vec3, v_star: f64, w: &CostWeights) -> f64 {
    (0..3)
        .map(|k| {
            let e = reduced[k] - v_star * dir[k];
            w.0[k] * e * e
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetEvent {
    Arrival(usize),
    Timeout(usize),
}

/// Per-rollout target state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioState {
    pub waypoints: Vec<[f64; 2]>,
    pub radius: f64,
    pub timeout: f64,
    pub active: usize,
    /// Time at which the active waypoint became active.
    pub activated_at: f64,
    pub v_star: f64,
    pub weights: CostWeights,
    pub direction: Vec3,
}

impl ScenarioState {
    pub fn new(waypoints: Vec<[f64; 2]>, radius: f64) -> Self {
        Self {
            waypoints,
            radius,
            timeout: WAYPOINT_TIMEOUT,
            active: 0,
            activated_at: 0.0,
            v_star: TARGET_SPEED,
            weights: CostWeights::default(),
            direction: Vec3::x(),
        }
    }

    /// A target that never changes: the fixed-condition setting of the baseline.
    pub fn fixed_direction(heading: f64) -> Self {
        let mut s = Self::new(Vec::new(), 0.0);
        s.direction = Vec3::new(heading.cos(), heading.sin(), 0.0);
        s
    }

    /// Random waypoint chain starting near `start`: each waypoint lies
    /// `spacing.0..spacing.1` metres from the previous one, kept inside `bounds`
    /// (`[xmin, xmax, ymin, ymax]`).
    pub fn random<R: Rng>(
        rng: &mut R,
        start: [f64; 2],
        radius: f64,
        spacing: (f64, f64),
        bounds: [f64; 4],
    ) -> Self {
        let mut pts = Vec::with_capacity(NUM_WAYPOINTS);
        let mut prev = start;
        for _ in 0..NUM_WAYPOINTS {
            let a = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let r = rng.random_range(spacing.0..=spacing.1);
            let p = [
                (prev[0] + r * a.cos()).clamp(bounds[0], bounds[1]),
                (prev[1] + r * a.sin()).clamp(bounds[2], bounds[3]),
            ];
            pts.push(p);
            prev = p;
        }
        let mut s = Self::new(pts, radius);
        s.direction = s.direction_from(start).unwrap_or(Vec3::x());
        s
    }

    pub fn finished(&self) -> bool {
        self.active >= self.waypoints.len()
    }

    fn direction_from(&self, com: [f64; 2]) -> Option<Vec3> {
        let w = self.waypoints.get(self.active)?;
        let (dx, dy) = (w[0] - com[0], w[1] - com[1]);
        let n = dx.hypot(dy);
        (n > 1e-12).then(|| Vec3::new(dx / n, dy / n, 0.0))
    }

    /// Advances on arrival or timeout, then points the target direction from
    /// the CoM to the active waypoint. The direction is held when undefined.
    pub fn update_target(&mut self, com: Vec3, t: f64) -> (Vec3, Option<TargetEvent>) {
        let mut event = None;
        if let Some(w) = self.waypoints.get(self.active) {
            if (w[0] - com.x).hypot(w[1] - com.y) < self.radius {
                event = Some(TargetEvent::Arrival(self.active));
            } else if t - self.activated_at >= self.timeout {
                event = Some(TargetEvent::Timeout(self.active));
            }
            if event.is_some() {
                self.active += 1;
                self.activated_at = t;
            }
        }
        if let Some(d) = self.direction_from([com.x, com.y]) {
            self.direction = d;
        }
        (self.direction, event)
    }
}
