//! Closed-loop sampling of the policy on the simulator.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::scenario::terrain::Terrain;
use crate::scenario::waypoints::{running_cost, ScenarioState, TargetEvent};
use crate::sim::engine::{step, DEFAULT_DT};
use crate::sim::model::{FaceId, RobotModel, Vec3, NUM_CABLES, NUM_FACES, NUM_NODES};
use crate::sim::{ControlCommand, FullState};
use crate::symmetry::{
    bottom_triangle, reduce_observation, reduction_frame, relabel_control, ReductionFrame, Symmetry,
};

pub const CONTROL_PERIOD: f64 = 0.1;

/// Anything that maps a reduced observation to canonical rest-length commands.
pub trait Controller: Sync {
    fn command(&self, observation: &[f64]) -> Result<Vec<f64>>;
}

impl Controller for PolicyParams {
    fn command(&self, observation: &[f64]) -> Result<Vec<f64>> {
        self.forward(observation)
    }
}

/// Shared read-only inputs of a rollout.
#[derive(Clone, Copy)]
pub struct World<'a> {
    pub model: &'a RobotModel,
    pub terrain: &'a Terrain,
    pub sym: &'a Symmetry,
    pub dt: f64,
}

impl<'a> World<'a> {
    pub fn new(model: &'a RobotModel, terrain: &'a Terrain, sym: &'a Symmetry) -> Self {
        Self { model, terrain, sym, dt: DEFAULT_DT }
    }

    pub fn substeps(&self) -> usize {
        (CONTROL_PERIOD / self.dt).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// State at the start of the control period.
    pub state: FullState,
    pub bottom_face: FaceId,
    /// Face the robot came from before reaching `bottom_face`.
    pub entry_from: FaceId,
    pub frame: ReductionFrame,
    pub observation: Vec<f64>,
    /// Applied command in physical cable order (after clamping).
    pub control: ControlCommand,
    /// The same command in canonical cable order.
    pub canonical_control: ControlCommand,
    pub improved_control: Option<ControlCommand>,
    /// Running cost of the state reached at the end of the period.
    pub cost: f64,
    pub target_dir: Vec3,
    pub active_waypoint: usize,
    pub event: Option<TargetEvent>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: usize,
    pub steps: Vec<StepRecord>,
    pub final_state: FullState,
    pub final_face: FaceId,
    pub final_entry_from: FaceId,
    pub final_frame: ReductionFrame,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// State, face and frame at index `t`, where `t == len()` is the final state.
    pub fn state_at(&self, t: usize) -> (&FullState, FaceId, &ReductionFrame) {
        if t < self.steps.len() {
            let s = &self.steps[t];
            (&s.state, s.bottom_face, &s.frame)
        } else {
            (&self.final_state, self.final_face, &self.final_frame)
        }
    }

    pub fn mean_cost(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.cost).sum::<f64>() / self.steps.len() as f64
    }

    /// Mean of `v_CoM · d̂` over the steps, using the end-of-period velocity.
    pub fn mean_forward_speed(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        let n = self.steps.len();
        (0..n)
            .map(|t| self.state_at(t + 1).0.com_velocity().dot(&self.steps[t].target_dir))
            .sum::<f64>()
            / n as f64
    }

    pub fn arrivals(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s.event, Some(TargetEvent::Arrival(_)))).count()
    }
}

/// Face with the lowest mean node clearance; used before any contact is known.
pub fn lowest_face(state: &FullState, model: &RobotModel, terrain: &Terrain) -> FaceId {
    let clearance: Vec<f64> =
        state.node_pos.iter().map(|p| p.z - terrain.height(p.x, p.y)).collect();
    (0..NUM_FACES)
        .min_by(|&a, &b| {
            let ha: f64 = model.faces[a].nodes.iter().map(|&n| clearance[n]).sum();
            let hb: f64 = model.faces[b].nodes.iter().map(|&n| clearance[n]).sum();
            ha.total_cmp(&hb)
        })
        .expect("faces exist")
}

/// Tracks bottom face, entry face and reduction frame along a state sequence.
#[derive(Clone, Debug)]
pub struct FaceTracker {
    pub face: FaceId,
    pub entry_from: FaceId,
}

impl FaceTracker {
    pub fn start(state: &FullState, world: &World) -> Self {
        let guess = lowest_face(state, world.model, world.terrain);
        let face = bottom_triangle(state, world.model, world.terrain, guess);
        Self { face, entry_from: face }
    }

    pub fn update(&mut self, state: &FullState, world: &World) -> Result<ReductionFrame> {
        let face = bottom_triangle(state, world.model, world.terrain, self.face);
        if face != self.face {
            self.entry_from = self.face;
            self.face = face;
        }
        reduction_frame(world.sym, world.model, self.face, self.entry_from, state)
    }
}

/// Runs `horizon` control steps of `policy` plus Gaussian exploration noise
/// (standard deviation `noise_scale` metres per cable) from `x0`.
pub fn rollout(
    world: &World,
    policy: &dyn Controller,
    x0: &FullState,
    horizon: usize,
    scenario: &ScenarioState,
    noise_scale: f64,
    seed: u64,
) -> Result<Trajectory> {
    let model = world.model;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scn = scenario.clone();
    let mut x = x0.clone();
    x.validate(model)?;
    let mut tracker = FaceTracker::start(&x, world);
    let substeps = world.substeps();
    let mut steps = Vec::with_capacity(horizon);

    for _ in 0..horizon {
        let frame = tracker.update(&x, world)?;
        let (target_dir, event) = scn.update_target(x.com(), x.sim_time);
        let observation = reduce_observation(world.sym, model, &x, &frame, target_dir)?;
        let raw = policy.command(&observation)?;
        if raw.len() != NUM_CABLES {
            return Err(Error::DimensionMismatch { expected: NUM_CABLES, got: raw.len() });
        }
        let canonical = ControlCommand {
            target_rest_lengths: std::array::from_fn(|c| {
                let n: f64 = StandardNormal.sample(&mut rng);
                model.clamp_rest_length(raw[c] + noise_scale * n)
            }),
        };
        let control = relabel_control(world.sym, &canonical, &frame);

        let start = x.clone();
        for _ in 0..substeps {
            x = step(&x, &control, model, world.terrain, world.dt)?;
        }
        let v = x.com_velocity();
        let cost = running_cost(&[v.x, v.y, v.z], target_dir, scn.v_star, &scn.weights);
        steps.push(StepRecord {
            state: start,
            bottom_face: tracker.face,
            entry_from: tracker.entry_from,
            frame,
            observation,
            control,
            canonical_control: canonical,
            improved_control: None,
            cost,
            target_dir,
            active_waypoint: scn.active,
            event,
        });
    }
    let final_frame = tracker.update(&x, world)?;
    Ok(Trajectory {
        id: 0,
        steps,
        final_state: x,
        final_face: tracker.face,
        final_entry_from: tracker.entry_from,
        final_frame,
    })
}

/// One CSV row per control step with full state, rest lengths, commands,
/// bottom face, cost, target heading, end-of-period CoM velocity and target event.
pub fn write_trajectory_csv<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut header = vec!["sim_time".to_string()];
    for kind in ["pos", "vel"] {
        for n in 0..NUM_NODES {
            for axis in ["x", "y", "z"] {
                header.push(format!("{kind}_{n}_{axis}"));
            }
        }
    }
    header.extend((0..NUM_CABLES).map(|c| format!("rest_{c}")));
    header.extend((0..NUM_CABLES).map(|c| format!("cmd_{c}")));
    header.extend(
        ["bottom_face", "cost", "target_heading", "end_com_vx", "end_com_vy", "end_com_vz", "event"].map(String::from),
    );
    out.write_record(&header).map_err(csv_err)?;
    for (t, s) in traj.steps.iter().enumerate() {
        let mut row = vec![format!("{:.3}", s.state.sim_time)];
        for v in s.state.node_pos.iter().chain(s.state.node_vel.iter()) {
            row.extend(v.iter().map(|x| format!("{x:.9}")));
        }
        row.extend(s.state.rest_lengths.iter().map(|x| format!("{x:.9}")));
        row.extend(s.control.target_rest_lengths.iter().map(|x| format!("{x:.9}")));
        row.push(s.bottom_face.to_string());
        row.push(format!("{:.9}", s.cost));
        row.push(format!("{:.9}", s.target_dir.y.atan2(s.target_dir.x)));
        let v = traj.state_at(t + 1).0.com_velocity();
        row.extend(v.iter().map(|x| format!("{x:.9}")));
        row.push(match s.event {
            None => String::new(),
            Some(TargetEvent::Arrival(k)) => format!("arrival:{k}"),
            Some(TargetEvent::Timeout(k)) => format!("timeout:{k}"),
        });
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::engine::settle_neutral;

    fn fixture() -> (RobotModel, Terrain, Symmetry) {
        let m = RobotModel::default_model();
        let s = Symmetry::new(&m).unwrap();
        (m, Terrain::flat(), s)
    }

    #[test]
    fn horizon_and_determinism() {
        let (m, t, s) = fixture();
        let world = World::new(&m, &t, &s);
        let x0 = settle_neutral(&m, &t, 0).unwrap();
        let p = PolicyParams::init(&m, 1);
        let scn = ScenarioState::fixed_direction(0.0);
        let a = rollout(&world, &p, &x0, 20, &scn, 0.04, 5).unwrap();
        let b = rollout(&world, &p, &x0, 20, &scn, 0.04, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        assert!((a.final_state.sim_time - 2.0).abs() < 1e-9);
        for st in &a.steps {
            for v in st.control.target_rest_lengths {
                assert!(v >= m.rest_length_bounds.0 && v <= m.rest_length_bounds.1);
            }
            assert!(st.bottom_face < NUM_FACES);
            assert_eq!(st.observation.len(), 47);
        }
        let c = rollout(&world, &p, &x0, 20, &scn, 0.04, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn constant_policy_stays_put() {
        let (m, t, s) = fixture();
        let world = World::new(&m, &t, &s);
        let x0 = settle_neutral(&m, &t, 3).unwrap();
        let p = PolicyParams::constant(&m, m.neutral_rest_length);
        let scn = ScenarioState::fixed_direction(0.0);
        let tr = rollout(&world, &p, &x0, 250, &scn, 0.0, 0).unwrap();
        assert!((tr.final_state.sim_time - 25.0).abs() < 1e-9);
        let d = (tr.final_state.com() - x0.com()).norm();
        assert!(d < 1e-2, "drift {d}");
    }

    #[test]
    fn csv_has_header_and_one_row_per_step() {
        let (m, t, s) = fixture();
        let world = World::new(&m, &t, &s);
        let x0 = settle_neutral(&m, &t, 0).unwrap();
        let p = PolicyParams::init(&m, 2);
        let tr = rollout(&world, &p, &x0, 3, &ScenarioState::fixed_direction(1.0), 0.01, 1).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &tr).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0].split(',').count(), 1 + 72 + 48 + 3 + 4);
    }
}
