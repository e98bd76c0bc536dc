//! Point-mass spring-rod integrator with penalty contact against a heightfield.

use nalgebra::{Rotation3, Unit};

use super::model::{FaceId, RobotModel, Vec3, NUM_CABLES, NUM_NODES};
use super::state::{ControlCommand, FullState};
use crate::error::{Error, Result};
use crate::scenario::terrain::Terrain;

pub const MAX_DT: f64 = 5e-3;
pub const DEFAULT_DT: f64 = 1e-3;

/// Per-element force breakdown, mostly useful to tests and diagnostics.
#[derive(Clone, Debug)]
pub struct ForceReport {
    pub node_forces: [Vec3; NUM_NODES],
    /// Signed tension per cable (always >= 0).
    pub cable_tension: [f64; NUM_CABLES],
    pub contact_normal: [f64; NUM_NODES],
}

/// Sum of all forces acting on each node in the given state.
pub fn compute_forces(state: &FullState, model: &RobotModel, terrain: &Terrain) -> ForceReport {
    let p = &model.params;
    let mut f = [Vec3::new(0.0, 0.0, -p.node_mass * p.gravity); NUM_NODES];

    for &(i, j) in &model.bars {
        let d = state.node_pos[j] - state.node_pos[i];
        let len = d.norm();
        if len <= 0.0 {
            continue;
        }
        let dir = d / len;
        let rate = (state.node_vel[j] - state.node_vel[i]).dot(&dir);
        let mag = p.rod_stiffness * (len - p.bar_length) + p.rod_damping * rate;
        f[i] += mag * dir;
        f[j] -= mag * dir;
    }

    let mut cable_tension = [0.0; NUM_CABLES];
    for (c, &(i, j)) in model.cables.iter().enumerate() {
        let d = state.node_pos[j] - state.node_pos[i];
        let len = d.norm();
        let rest = state.rest_lengths[c];
        if len <= rest || len <= 0.0 {
            continue;
        }
        let dir = d / len;
        let rate = (state.node_vel[j] - state.node_vel[i]).dot(&dir);
        let tension = (p.cable_stiffness * (len - rest) + p.cable_damping * rate).max(0.0);
        cable_tension[c] = tension;
        f[i] += tension * dir;
        f[j] -= tension * dir;
    }

    let mut contact_normal = [0.0; NUM_NODES];
    for n in 0..NUM_NODES {
        let x = state.node_pos[n];
        let (h, normal) = terrain.height_and_normal(x.x, x.y);
        let pen = h - x.z;
        if pen <= 0.0 {
            continue;
        }
        let depth = pen * normal.z;
        let v = state.node_vel[n];
        let vn = v.dot(&normal);
        let fn_mag = (p.contact_normal_stiffness * depth - p.contact_damping * vn).max(0.0);
        contact_normal[n] = fn_mag;
        f[n] += fn_mag * normal;
        let vt = v - vn * normal;
        let slip = vt.norm();
        if slip > 0.0 {
            let ft = (p.friction_coefficient * fn_mag).min(p.friction_regularization * slip);
            f[n] -= ft * (vt / slip);
        }
    }

    ForceReport { node_forces: f, cable_tension, contact_normal }
}

/// Advances the state by one semi-implicit Euler step of length `dt`.
///
/// The command is clamped to the rest-length bounds; each rest length then
/// moves toward its target by at most `actuator_rate_limit * dt`.
pub fn step(
    state: &FullState,
    cmd: &ControlCommand,
    model: &RobotModel,
    terrain: &Terrain,
    dt: f64,
) -> Result<FullState> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("must lie in (0, {MAX_DT}], got {dt}"),
        });
    }
    let forces = compute_forces(state, model, terrain).node_forces;
    let mut next = state.clone();
    let inv_m = 1.0 / model.params.node_mass;
    for n in 0..NUM_NODES {
        next.node_vel[n] += forces[n] * (inv_m * dt);
        next.node_pos[n] += next.node_vel[n] * dt;
    }
    let max_delta = model.params.actuator_rate_limit * dt;
    for c in 0..NUM_CABLES {
        let target = model.clamp_rest_length(cmd.target_rest_lengths[c]);
        let delta = (target - state.rest_lengths[c]).clamp(-max_delta, max_delta);
        next.rest_lengths[c] = model.clamp_rest_length(state.rest_lengths[c] + delta);
    }
    next.sim_time = state.sim_time + dt;
    for n in 0..NUM_NODES {
        let finite = next.node_pos[n].iter().chain(next.node_vel[n].iter()).all(|x| x.is_finite());
        if !finite {
            return Err(Error::IntegrationBlowup { node: n, time: next.sim_time });
        }
    }
    Ok(next)
}

/// Advances `duration` seconds under a constant command.
pub fn simulate(
    state: &FullState,
    cmd: &ControlCommand,
    model: &RobotModel,
    terrain: &Terrain,
    dt: f64,
    duration: f64,
) -> Result<FullState> {
    let steps = (duration / dt).round() as usize;
    let mut s = state.clone();
    for _ in 0..steps {
        s = step(&s, cmd, model, terrain, dt)?;
    }
    Ok(s)
}

/// Gravitational, elastic and kinetic energy (J), with potential measured from z = 0.
pub fn mechanical_energy(state: &FullState, model: &RobotModel) -> f64 {
    let p = &model.params;
    let mut e = state.kinetic_energy(model);
    e += state.node_pos.iter().map(|x| p.node_mass * p.gravity * x.z).sum::<f64>();
    for &(i, j) in &model.bars {
        let stretch = (state.node_pos[j] - state.node_pos[i]).norm() - p.bar_length;
        e += 0.5 * p.rod_stiffness * stretch * stretch;
    }
    for (c, &(i, j)) in model.cables.iter().enumerate() {
        let stretch = ((state.node_pos[j] - state.node_pos[i]).norm() - state.rest_lengths[c]).max(0.0);
        e += 0.5 * p.cable_stiffness * stretch * stretch;
    }
    e
}

/// Rotation taking the neutral geometry to a pose resting on `face` with the
/// given yaw about the vertical.
pub fn face_down_rotation(model: &RobotModel, face: FaceId, yaw: f64) -> Rotation3<f64> {
    let f = &model.faces[face];
    let pts: Vec<Vec3> = f.nodes.iter().map(|&n| model.node_positions_neutral[n]).collect();
    let outward = (pts[1] - pts[0]).cross(&(pts[2] - pts[0])).normalize();
    let down = -Vec3::z();
    let tilt = Rotation3::rotation_between(&outward, &down)
        .unwrap_or_else(|| Rotation3::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI));
    Rotation3::from_axis_angle(&Unit::new_unchecked(Vec3::z()), yaw) * tilt
}

/// Places the (rotated) neutral geometry over `(x, y)` so that its lowest node
/// clears the terrain under its footprint by `clearance`.
pub fn place_robot(
    model: &RobotModel,
    terrain: &Terrain,
    face: FaceId,
    xy: (f64, f64),
    yaw: f64,
    rest_lengths: [f64; NUM_CABLES],
    clearance: f64,
) -> FullState {
    let rot = face_down_rotation(model, face, yaw);
    let mut state = FullState::neutral(model);
    state.rest_lengths = rest_lengths;
    for (n, p) in state.node_pos.iter_mut().enumerate() {
        *p = rot * model.node_positions_neutral[n] + Vec3::new(xy.0, xy.1, 0.0);
    }
    let dz = state
        .node_pos
        .iter()
        .map(|p| terrain.height(p.x, p.y) - p.z)
        .fold(f64::NEG_INFINITY, f64::max)
        + clearance;
    for p in &mut state.node_pos {
        p.z += dz;
    }
    state
}

pub const SETTLE_ENERGY_THRESHOLD: f64 = 1e-4;
pub const SETTLE_MAX_TIME: f64 = 10.0;

/// Integrates with constant rest-length commands until the kinetic energy falls
/// below `SETTLE_ENERGY_THRESHOLD` (after a short minimum duration) or
/// `max_time` elapses.
pub fn settle(
    state: &FullState,
    cmd: &ControlCommand,
    model: &RobotModel,
    terrain: &Terrain,
    dt: f64,
    max_time: f64,
) -> Result<FullState> {
    let steps = (max_time / dt).round() as usize;
    let min_steps = (0.2 / dt).round() as usize;
    let mut s = state.clone();
    if s.kinetic_energy(model) < SETTLE_ENERGY_THRESHOLD && is_static(&s, cmd, model, terrain) {
        return Ok(s);
    }
    for k in 0..steps {
        s = step(&s, cmd, model, terrain, dt)?;
        if k >= min_steps && k % 10 == 0 && s.kinetic_energy(model) < SETTLE_ENERGY_THRESHOLD {
            return Ok(s);
        }
    }
    let energy = s.kinetic_energy(model);
    if energy < SETTLE_ENERGY_THRESHOLD {
        Ok(s)
    } else {
        Err(Error::SettleFailure { time: max_time, energy })
    }
}

fn is_static(s: &FullState, cmd: &ControlCommand, model: &RobotModel, terrain: &Terrain) -> bool {
    let forces = compute_forces(s, model, terrain).node_forces;
    let actuating = s
        .rest_lengths
        .iter()
        .zip(cmd.target_rest_lengths.iter())
        .any(|(r, c)| (model.clamp_rest_length(*c) - r).abs() > 0.0);
    !actuating && forces.iter().all(|f| f.norm() < 1e-9)
}

/// Drops the robot onto `start_face` at the terrain centre with neutral rest
/// lengths and lets it come to rest. The returned state is re-timed to t = 0.
pub fn settle_neutral(model: &RobotModel, terrain: &Terrain, start_face: FaceId) -> Result<FullState> {
    let cmd = ControlCommand::neutral(model);
    let placed = place_robot(
        model,
        terrain,
        start_face,
        terrain.center(),
        0.0,
        cmd.target_rest_lengths,
        0.005,
    );
    let mut settled = settle(&placed, &cmd, model, terrain, DEFAULT_DT, SETTLE_MAX_TIME)?;
    settled.sim_time = 0.0;
    Ok(settled)
}

/// Angular velocity of each bar from its endpoint kinematics, `ω = d × ḋ / |d|²`.
/// The axial spin of a two-point rod is unobservable and is reported as zero.
pub fn bar_angular_velocities(state: &FullState, model: &RobotModel) -> Result<[Vec3; 6]> {
    let mut out = [Vec3::zeros(); 6];
    for (b, &(i, j)) in model.bars.iter().enumerate() {
        let d = state.node_pos[j] - state.node_pos[i];
        let len2 = d.norm_squared();
        if len2 < 1e-12 {
            return Err(Error::DegenerateBar { bar: b, length: len2.sqrt() });
        }
        let dd = state.node_vel[j] - state.node_vel[i];
        out[b] = d.cross(&dd) / len2;
    }
    Ok(out)
}
