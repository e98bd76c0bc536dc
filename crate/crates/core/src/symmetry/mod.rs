//! Structure-preserving maps of the 6-bar tensegrity and the symmetry
//! reduction built on top of them.
//!
//! A map pairs a relabeling of nodes (and the cables, bars and faces they
//! induce) with the signed permutation matrix that realizes it on the neutral
//! icosahedron. Reduction only ever moves world quantities by a ground-plane
//! isometry: the relabeling, a mirror through the vertical x-z plane when the
//! map is improper, and a yaw rotation.

use std::f64::consts::PI;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::model::{edge, Edge, FaceId, FaceKind, RobotModel, Vec3, NUM_BARS, NUM_CABLES, NUM_FACES, NUM_NODES};
use crate::sim::{bar_angular_velocities, ControlCommand, FullState};
use crate::scenario::terrain::Terrain;

pub mod observation;

pub use observation::{reduce_observation, track_heading, OBS_DIM};

pub const NUM_MAPS: usize = 24;

/// Nodes within this height above the terrain count as touching it.
pub const CONTACT_BAND: f64 = 0.08;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryMap {
    pub node_perm: [usize; NUM_NODES],
    pub cable_perm: [usize; NUM_CABLES],
    pub bar_perm: [usize; NUM_BARS],
    pub face_perm: [usize; NUM_FACES],
    pub orthogonal: Matrix3<f64>,
}

impl SymmetryMap {
    pub fn determinant(&self) -> f64 {
        self.orthogonal.determinant()
    }

    pub fn is_proper(&self) -> bool {
        self.determinant() > 0.0
    }

    pub fn is_identity(&self) -> bool {
        self.node_perm.iter().enumerate().all(|(i, &j)| i == j)
    }

    pub fn map_edge(&self, e: Edge) -> Edge {
        edge(self.node_perm[e.0], self.node_perm[e.1])
    }
}

/// Ground-plane transform attached to a map: mirror through the x-z plane for
/// improper maps, identity otherwise.
pub fn chirality_mirror(proper: bool) -> Matrix3<f64> {
    if proper {
        Matrix3::identity()
    } else {
        Matrix3::from_diagonal(&Vec3::new(1.0, -1.0, 1.0))
    }
}

pub fn yaw_matrix(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Which canonical face a frame reduces to, plus how to get there.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionFrame {
    pub map_index: usize,
    pub current_face: FaceId,
    pub reference_face: FaceId,
    /// Yaw (rad) of the mirrored world frame that is removed by the reduction.
    pub heading_rotation: f64,
    pub mirrored: bool,
    /// Slot of the canonical face receiving the entry edge, when the previous
    /// face was adjacent.
    pub entry_slot: Option<usize>,
}

impl ReductionFrame {
    /// World-to-canonical linear map `Rz(-heading) · M`.
    pub fn transform(&self) -> Matrix3<f64> {
        yaw_matrix(-self.heading_rotation) * chirality_mirror(!self.mirrored)
    }

    pub fn kind(&self, model: &RobotModel) -> FaceKind {
        model.faces[self.reference_face].kind
    }
}

/// Enumerated group of maps plus the canonical-face conventions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Symmetry {
    pub maps: Vec<SymmetryMap>,
    /// `compose[a][b]` is the index of "apply `b`, then `a`".
    pub compose: Vec<Vec<usize>>,
    pub inverse: Vec<usize>,
    pub canonical_delta: FaceId,
    pub canonical_lambda: FaceId,
    /// Canonical node ids of the six nodes closest to each canonical face.
    pub lower_nodes_delta: [usize; 6],
    pub lower_nodes_lambda: [usize; 6],
}

/// Brute-force search over the 48 signed 3×3 permutation matrices.
pub fn enumerate_maps(model: &RobotModel) -> Result<Vec<SymmetryMap>> {
    let pts = &model.node_positions_neutral;
    let tol = 1e-9 * model.params.bar_length.max(1.0);
    let perms = [[0, 1, 2], [1, 2, 0], [2, 0, 1], [0, 2, 1], [2, 1, 0], [1, 0, 2]];
    let mut out = Vec::new();
    for perm in perms {
        for signs in 0..8u32 {
            let mut q = Matrix3::zeros();
            for (row, &col) in perm.iter().enumerate() {
                q[(row, col)] = if signs >> row & 1 == 1 { -1.0 } else { 1.0 };
            }
            if let Some(map) = induced_map(model, q, pts, tol) {
                out.push(map);
            }
        }
    }
    // Identity first, the rest in search order.
    if let Some(k) = out.iter().position(|m| m.is_identity()) {
        let id = out.remove(k);
        out.insert(0, id);
    }
    if out.len() != NUM_MAPS {
        return Err(Error::Geometry(format!("found {} symmetry maps, expected {NUM_MAPS}", out.len())));
    }
    Ok(out)
}

fn induced_map(model: &RobotModel, q: Matrix3<f64>, pts: &[Vec3], tol: f64) -> Option<SymmetryMap> {
    let mut node_perm = [usize::MAX; NUM_NODES];
    for (i, p) in pts.iter().enumerate() {
        let img = q * p;
        node_perm[i] = pts.iter().position(|r| (r - img).norm() < tol)?;
    }
    let mut seen = [false; NUM_NODES];
    for &j in &node_perm {
        if std::mem::replace(&mut seen[j], true) {
            return None;
        }
    }
    let map_edge = |e: Edge| edge(node_perm[e.0], node_perm[e.1]);

    let mut bar_perm = [0; NUM_BARS];
    for (b, &e) in model.bars.iter().enumerate() {
        bar_perm[b] = model.bars.iter().position(|&x| x == map_edge(e))?;
    }
    let mut cable_perm = [0; NUM_CABLES];
    for (c, &e) in model.cables.iter().enumerate() {
        cable_perm[c] = model.cable_index(map_edge(e))?;
    }
    let mut face_perm = [0; NUM_FACES];
    for (f, face) in model.faces.iter().enumerate() {
        let mut img = face.nodes.map(|n| node_perm[n]);
        img.sort_unstable();
        face_perm[f] = model.faces.iter().position(|g| {
            let mut s = g.nodes;
            s.sort_unstable();
            s == img
        })?;
        if model.faces[face_perm[f]].kind != face.kind {
            return None;
        }
    }
    Some(SymmetryMap { node_perm, cable_perm, bar_perm, face_perm, orthogonal: q })
}

impl Symmetry {
    pub fn new(model: &RobotModel) -> Result<Self> {
        let maps = enumerate_maps(model)?;
        let n = maps.len();
        let mut compose = vec![vec![0; n]; n];
        for a in 0..n {
            for b in 0..n {
                let perm: [usize; NUM_NODES] =
                    std::array::from_fn(|i| maps[a].node_perm[maps[b].node_perm[i]]);
                compose[a][b] = maps.iter().position(|m| m.node_perm == perm).ok_or_else(|| {
                    Error::Geometry(format!("composition of maps {a} and {b} is not in the table"))
                })?;
            }
        }
        let inverse = (0..n)
            .map(|a| {
                (0..n)
                    .find(|&b| compose[a][b] == 0)
                    .ok_or_else(|| Error::Geometry(format!("map {a} has no inverse")))
            })
            .collect::<Result<Vec<_>>>()?;

        let first = |kind: FaceKind| {
            model
                .faces
                .iter()
                .position(|f| f.kind == kind)
                .ok_or_else(|| Error::Geometry(format!("no {kind:?} face")))
        };
        let canonical_delta = first(FaceKind::Delta)?;
        let canonical_lambda = first(FaceKind::Lambda)?;
        Ok(Self {
            lower_nodes_delta: lower_nodes(model, canonical_delta),
            lower_nodes_lambda: lower_nodes(model, canonical_lambda),
            maps,
            compose,
            inverse,
            canonical_delta,
            canonical_lambda,
        })
    }

    pub fn canonical_face(&self, kind: FaceKind) -> FaceId {
        match kind {
            FaceKind::Delta => self.canonical_delta,
            FaceKind::Lambda => self.canonical_lambda,
        }
    }

    pub fn lower_nodes(&self, kind: FaceKind) -> &[usize; 6] {
        match kind {
            FaceKind::Delta => &self.lower_nodes_delta,
            FaceKind::Lambda => &self.lower_nodes_lambda,
        }
    }

    /// Applies map `k` to a state as a physical symmetry: nodes and cables are
    /// relabeled and positions/velocities are mirrored if the map is improper,
    /// then rotated by `yaw` about the vertical through the origin.
    pub fn act_on_state(&self, k: usize, state: &FullState, yaw: f64) -> FullState {
        let m = &self.maps[k];
        let g = yaw_matrix(yaw) * chirality_mirror(m.is_proper());
        let mut out = state.clone();
        for i in 0..NUM_NODES {
            out.node_pos[m.node_perm[i]] = g * state.node_pos[i];
            out.node_vel[m.node_perm[i]] = g * state.node_vel[i];
        }
        for c in 0..NUM_CABLES {
            out.rest_lengths[m.cable_perm[c]] = state.rest_lengths[c];
        }
        out
    }

    /// Relabels a command alongside [`Symmetry::act_on_state`].
    pub fn act_on_control(&self, k: usize, cmd: &ControlCommand) -> ControlCommand {
        let m = &self.maps[k];
        let mut out = *cmd;
        for c in 0..NUM_CABLES {
            out.target_rest_lengths[m.cable_perm[c]] = cmd.target_rest_lengths[c];
        }
        out
    }

    /// Writes the map table as JSON.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn lower_nodes(model: &RobotModel, face: FaceId) -> [usize; 6] {
    let f = &model.faces[face];
    let p: Vec<Vec3> = f.nodes.iter().map(|&n| model.node_positions_neutral[n]).collect();
    let outward = (p[1] - p[0]).cross(&(p[2] - p[0])).normalize();
    let mut ids: Vec<usize> = (0..NUM_NODES).collect();
    ids.sort_by(|&a, &b| {
        let da = model.node_positions_neutral[a].dot(&outward);
        let db = model.node_positions_neutral[b].dot(&outward);
        db.total_cmp(&da).then(a.cmp(&b))
    });
    let mut out = [0; 6];
    out.copy_from_slice(&ids[..6]);
    out.sort_unstable();
    out
}

/// Supporting face under the centre of mass, or `previous` if no face has all
/// three nodes in the contact band with the CoM above it. Ties go to the lower
/// face id.
pub fn bottom_triangle(state: &FullState, model: &RobotModel, terrain: &Terrain, previous: FaceId) -> FaceId {
    let in_band: Vec<bool> = state
        .node_pos
        .iter()
        .map(|p| p.z - terrain.height(p.x, p.y) < CONTACT_BAND)
        .collect();
    let com = state.com();
    for (id, f) in model.faces.iter().enumerate() {
        if !f.nodes.iter().all(|&n| in_band[n]) {
            continue;
        }
        let [a, b, c] = f.nodes.map(|n| state.node_pos[n]);
        if contains_xy(a, b, c, com) {
            return id;
        }
    }
    previous
}

fn contains_xy(a: Vec3, b: Vec3, c: Vec3, p: Vec3) -> bool {
    let cross = |o: Vec3, u: Vec3, v: Vec3| (u.x - o.x) * (v.y - o.y) - (u.y - o.y) * (v.x - o.x);
    let area = cross(a, b, c);
    if area.abs() < 1e-15 {
        return false;
    }
    let s = area.signum();
    let eps = -1e-12 * area.abs();
    s * cross(a, b, p) >= eps && s * cross(b, c, p) >= eps && s * cross(c, a, p) >= eps
}

/// Chooses the map that carries `current` onto the canonical face of its kind.
///
/// Among the candidates the one sending the entry edge (shared with
/// `previous`) to the lowest canonical slot wins, then the lowest map index.
/// Returns the map index and the canonical slot of the entry edge.
pub fn frame_map(sym: &Symmetry, model: &RobotModel, current: FaceId, previous: FaceId) -> Result<(usize, Option<usize>)> {
    if current >= NUM_FACES {
        return Err(Error::Internal(format!("face id {current} out of range")));
    }
    let reference = sym.canonical_face(model.faces[current].kind);
    let canon = &model.faces[reference];
    let entry = if previous < NUM_FACES { model.shared_edge(previous, current) } else { None };

    let mut best: Option<(usize, usize, Option<usize>)> = None;
    for (k, m) in sym.maps.iter().enumerate() {
        if m.face_perm[current] != reference {
            continue;
        }
        let slot = entry.map(|e| {
            canon
                .edge_slot(m.map_edge(e))
                .expect("a face-preserving map keeps its edges on the face")
        });
        let key = slot.unwrap_or(0);
        if best.is_none_or(|(bk, _, _)| key < bk) {
            best = Some((key, k, slot));
        }
    }
    let (_, map_index, entry_slot) = best.ok_or_else(|| {
        Error::Internal(format!("face {current} is not reachable by any symmetry map"))
    })?;
    Ok((map_index, entry_slot))
}

/// [`frame_map`] plus the yaw that puts the canonical slot-0 edge behind the
/// face, along -x.
pub fn reduction_frame(
    sym: &Symmetry,
    model: &RobotModel,
    current: FaceId,
    previous: FaceId,
    state: &FullState,
) -> Result<ReductionFrame> {
    let (map_index, entry_slot) = frame_map(sym, model, current, previous)?;
    let reference = sym.canonical_face(model.faces[current].kind);
    let canon = &model.faces[reference];

    let m = &sym.maps[map_index];
    let mirror = chirality_mirror(m.is_proper());
    let inv = &sym.maps[sym.inverse[map_index]].node_perm;
    // Canonical node n sits where physical node inv[n] is.
    let pos = |n: usize| mirror * state.node_pos[inv[n]];
    let centroid = (pos(canon.nodes[0]) + pos(canon.nodes[1]) + pos(canon.nodes[2])) / 3.0;
    let mid = (pos(canon.nodes[0]) + pos(canon.nodes[1])) / 2.0;
    let d = mid - centroid;
    let heading_rotation = wrap_angle(d.y.atan2(d.x) - PI);

    Ok(ReductionFrame {
        map_index,
        current_face: current,
        reference_face: reference,
        heading_rotation,
        mirrored: !m.is_proper(),
        entry_slot,
    })
}

pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Expresses a physical state in the canonical labels and frame.
pub fn canonicalize_state(sym: &Symmetry, state: &FullState, frame: &ReductionFrame) -> FullState {
    let m = &sym.maps[frame.map_index];
    let g = frame.transform();
    let mut out = state.clone();
    for i in 0..NUM_NODES {
        out.node_pos[m.node_perm[i]] = g * state.node_pos[i];
        out.node_vel[m.node_perm[i]] = g * state.node_vel[i];
    }
    for c in 0..NUM_CABLES {
        out.rest_lengths[m.cable_perm[c]] = state.rest_lengths[c];
    }
    out
}

/// Inverse of [`canonicalize_state`].
pub fn restore_state(sym: &Symmetry, canonical: &FullState, frame: &ReductionFrame) -> FullState {
    let m = &sym.maps[frame.map_index];
    let gt = frame.transform().transpose();
    let mut out = canonical.clone();
    for i in 0..NUM_NODES {
        out.node_pos[i] = gt * canonical.node_pos[m.node_perm[i]];
        out.node_vel[i] = gt * canonical.node_vel[m.node_perm[i]];
    }
    for c in 0..NUM_CABLES {
        out.rest_lengths[c] = canonical.rest_lengths[m.cable_perm[c]];
    }
    out
}

/// Canonical-frame command to physical cable order.
pub fn relabel_control(sym: &Symmetry, canonical: &ControlCommand, frame: &ReductionFrame) -> ControlCommand {
    let m = &sym.maps[frame.map_index];
    ControlCommand { target_rest_lengths: std::array::from_fn(|c| canonical.target_rest_lengths[m.cable_perm[c]]) }
}

/// Physical command to canonical cable order.
pub fn canonicalize_control(sym: &Symmetry, physical: &ControlCommand, frame: &ReductionFrame) -> ControlCommand {
    let m = &sym.maps[frame.map_index];
    let mut out = *physical;
    for c in 0..NUM_CABLES {
        out.target_rest_lengths[m.cable_perm[c]] = physical.target_rest_lengths[c];
    }
    out
}

/// World-frame direction expressed in the canonical frame.
pub fn canonical_direction(frame: &ReductionFrame, world: Vec3) -> Vec3 {
    frame.transform() * world
}

/// Bar angular velocities in canonical labels and frame.
pub fn canonical_bar_rates(sym: &Symmetry, model: &RobotModel, state: &FullState, frame: &ReductionFrame) -> Result<[Vec3; NUM_BARS]> {
    bar_angular_velocities(&canonicalize_state(sym, state, frame), model)
}

#[cfg(test)]
mod tests;
