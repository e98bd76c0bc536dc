use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensegrity_gps::localization::segment::{classify_segment, segment_trajectory};
use tensegrity_gps::rollout::{rollout, Controller, FaceTracker, Trajectory, World, CONTROL_PERIOD};
use tensegrity_gps::scenario::terrain::Terrain;
use tensegrity_gps::scenario::waypoints::ScenarioState;
use tensegrity_gps::sim::engine::{settle_neutral, simulate, DEFAULT_DT};
use tensegrity_gps::sim::{ControlCommand, FullState, RobotModel};
use tensegrity_gps::symmetry::Symmetry;
use tensegrity_gps::Result;

fn random_command(model: &RobotModel, rng: &mut ChaCha8Rng) -> ControlCommand {
    let (lo, hi) = model.rest_length_bounds;
    let mut c = ControlCommand::neutral(model);
    for v in c.target_rest_lengths.iter_mut() {
        *v = rng.random_range(lo..hi);
    }
    c
}

#[test]
fn dynamics_commute_with_every_map() {
    let m = RobotModel::default_model();
    let t = Terrain::flat();
    let sym = Symmetry::new(&m).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x0 = settle_neutral(&m, &t, 0).unwrap();
    let cmds: Vec<ControlCommand> = (0..10).map(|_| random_command(&m, &mut rng)).collect();
    let run = |x: &tensegrity_gps::sim::FullState, cmds: &[ControlCommand]| {
        cmds.iter().fold(x.clone(), |s, c| simulate(&s, c, &m, &t, DEFAULT_DT, 0.1).unwrap())
    };
    let x1 = run(&x0, &cmds);
    assert!((x1.sim_time - x0.sim_time - 1.0).abs() < 1e-9);
    let moved = x1.node_pos.iter().zip(&x0.node_pos).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(moved > 0.05, "commands should deform the robot, moved {moved}");
    for k in 0..24 {
        let yaw = rng.random_range(-3.0..3.0);
        let y0 = sym.act_on_state(k, &x0, yaw);
        let mapped: Vec<ControlCommand> = cmds.iter().map(|c| sym.act_on_control(k, c)).collect();
        let y1 = run(&y0, &mapped);
        let expect = sym.act_on_state(k, &x1, yaw);
        let err = y1.node_pos.iter().zip(&expect.node_pos).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-6, "map {k}: node position error {err:e}");
    }
}

/// Replays a fixed sequence of canonical commands, one per call.
struct Replay {
    cmds: Vec<Vec<f64>>,
    next: AtomicUsize,
}

impl Controller for Replay {
    fn command(&self, _: &[f64]) -> Result<Vec<f64>> {
        let k = self.next.fetch_add(1, Ordering::Relaxed);
        Ok(self.cmds[k % self.cmds.len()].clone())
    }
}

#[test]
fn symmetric_rollouts_share_segment_classes() {
    let m = RobotModel::default_model();
    let t = Terrain::flat();
    let sym = Symmetry::new(&m).unwrap();
    let world = World::new(&m, &t, &sym);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cmds: Vec<Vec<f64>> = (0..20)
        .flat_map(|_| {
            let c = random_command(&m, &mut rng).target_rest_lengths.to_vec();
            std::iter::repeat_n(c, 5)
        })
        .collect();
    let replay = || Replay { cmds: cmds.clone(), next: AtomicUsize::new(0) };
    let x0 = settle_neutral(&m, &t, sym.canonical_face(tensegrity_gps::sim::FaceKind::Delta)).unwrap();
    let heading = 0.4;
    let base = rollout(&world, &replay(), &x0, 100, &ScenarioState::fixed_direction(heading), 0.0, 0).unwrap();
    let classes = |tr: &Trajectory| {
        segment_trajectory(tr, 50)
            .segments
            .iter()
            .map(|s| (s.start, s.end, classify_segment(s, &m, &sym).unwrap()))
            .collect::<Vec<_>>()
    };
    let reference = classes(&base);
    assert!(reference.len() >= 3, "expected several flops, got {} segments", reference.len());
    for k in 0..24 {
        let yaw = rng.random_range(-3.0..3.0);
        let tr = mapped_rollout(&world, &base, &x0, k, yaw);
        for (a, b) in tr.steps.iter().zip(&base.steps) {
            assert_eq!(a.bottom_face, sym.maps[k].face_perm[b.bottom_face], "map {k} at {:.1} s", a.state.sim_time);
        }
        assert_eq!(tr.final_face, sym.maps[k].face_perm[base.final_face], "map {k}");
        assert_eq!(classes(&tr), reference, "map {k}");
    }
}

/// Replays the physical commands of `base`, relabeled by map `k`, from the
/// mapped start state, tracking bottom faces and frames from scratch.
fn mapped_rollout(world: &World, base: &Trajectory, x0: &FullState, k: usize, yaw: f64) -> Trajectory {
    let mut x = world.sym.act_on_state(k, x0, yaw);
    let mut tracker = FaceTracker::start(&x, world);
    let mut steps = Vec::new();
    for st in &base.steps {
        let frame = tracker.update(&x, world).unwrap();
        let control = world.sym.act_on_control(k, &st.control);
        let mut rec = st.clone();
        rec.state = x.clone();
        rec.bottom_face = tracker.face;
        rec.entry_from = tracker.entry_from;
        rec.frame = frame;
        rec.control = control;
        x = simulate(&x, &control, world.model, world.terrain, world.dt, CONTROL_PERIOD).unwrap();
        steps.push(rec);
    }
    let final_frame = tracker.update(&x, world).unwrap();
    Trajectory { id: 0, steps, final_face: tracker.face, final_entry_from: tracker.entry_from, final_frame, final_state: x }
}
