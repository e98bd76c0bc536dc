//! Topology, neutral geometry and physical parameters of the 6-bar tensegrity.
//!
//! The twelve nodes sit on the vertices of a regular icosahedron, i.e. the
//! cyclic permutations of `(0, ±1, ±φ)`. Each bar joins the two vertices that
//! differ only in the sign of the `φ` coordinate (the long axis-parallel
//! diagonals), so the bars come in three parallel pairs. Of the 30 icosahedron
//! edges, the six joining vertices that differ only in the sign of the unit
//! coordinate are left uncabled ("virtual" edges); the other 24 carry cables.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

pub const NUM_NODES: usize = 12;
pub const NUM_BARS: usize = 6;
pub const NUM_CABLES: usize = 24;
pub const NUM_FACES: usize = 20;

pub type FaceId = usize;
pub type NodeId = usize;

/// An undirected node pair with the smaller index first.
pub type Edge = (NodeId, NodeId);

pub(crate) fn edge(a: NodeId, b: NodeId) -> Edge {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FaceKind {
    /// Bounded by three cables.
    Delta,
    /// Bounded by two cables and one virtual edge.
    Lambda,
}

/// Exterior triangle of the icosahedral hull.
///
/// Nodes are ordered counter-clockwise when viewed from outside the robot.
/// For [`FaceKind::Lambda`] faces the edge in slot 0 is the virtual edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Face {
    pub nodes: [NodeId; 3],
    pub kind: FaceKind,
}

impl Face {
    /// Edge in the given slot: slot `k` joins `nodes[k]` and `nodes[(k + 1) % 3]`.
    pub fn edge(&self, slot: usize) -> Edge {
        edge(self.nodes[slot % 3], self.nodes[(slot + 1) % 3])
    }

    pub fn edge_slot(&self, e: Edge) -> Option<usize> {
        (0..3).find(|&k| self.edge(k) == edge(e.0, e.1))
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.nodes.contains(&node)
    }
}

/// Tunable physical constants of the point-mass engine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicalParams {
    pub node_mass: f64,
    pub bar_length: f64,
    pub cable_stiffness: f64,
    pub cable_damping: f64,
    pub rod_stiffness: f64,
    pub rod_damping: f64,
    pub contact_normal_stiffness: f64,
    pub contact_damping: f64,
    pub friction_coefficient: f64,
    /// Slope of the regularized Coulomb law near zero slip velocity (N·s/m).
    pub friction_regularization: f64,
    pub actuator_rate_limit: f64,
    /// Rest-length bounds as fractions of the neutral cable length.
    pub rest_length_bounds_ratio: (f64, f64),
    /// Neutral (commanded) rest length as a fraction of the neutral cable length.
    pub pretension_ratio: f64,
    pub gravity: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self {
            node_mass: 1.0,
            bar_length: 1.94,
            cable_stiffness: 1000.0,
            cable_damping: 20.0,
            rod_stiffness: 50_000.0,
            rod_damping: 100.0,
            contact_normal_stiffness: 20_000.0,
            contact_damping: 200.0,
            friction_coefficient: 0.5,
            friction_regularization: 1000.0,
            actuator_rate_limit: 0.25,
            rest_length_bounds_ratio: (0.6, 1.1),
            pretension_ratio: 0.92,
            gravity: 9.81,
        }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("node_mass", self.node_mass),
            ("bar_length", self.bar_length),
            ("cable_stiffness", self.cable_stiffness),
            ("rod_stiffness", self.rod_stiffness),
            ("contact_normal_stiffness", self.contact_normal_stiffness),
            ("actuator_rate_limit", self.actuator_rate_limit),
            ("pretension_ratio", self.pretension_ratio),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be positive, got {value}"),
                });
            }
        }
        let non_negative = [
            ("cable_damping", self.cable_damping),
            ("rod_damping", self.rod_damping),
            ("contact_damping", self.contact_damping),
            ("friction_coefficient", self.friction_coefficient),
            ("friction_regularization", self.friction_regularization),
            ("gravity", self.gravity),
        ];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be non-negative, got {value}"),
                });
            }
        }
        let (lo, hi) = self.rest_length_bounds_ratio;
        if !(lo > 0.0 && hi > lo && lo <= self.pretension_ratio && self.pretension_ratio <= hi) {
            return Err(Error::InvalidParameter {
                name: "rest_length_bounds_ratio",
                reason: format!(
                    "need 0 < lo <= pretension_ratio <= hi, got ({lo}, {hi}) with pretension {}",
                    self.pretension_ratio
                ),
            });
        }
        Ok(())
    }
}

/// Immutable description of the robot.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RobotModel {
    pub params: PhysicalParams,
    pub node_positions_neutral: Vec<Vec3>,
    pub bars: Vec<Edge>,
    pub cables: Vec<Edge>,
    pub virtual_edges: Vec<Edge>,
    pub faces: Vec<Face>,
    /// Geometric cable length of the icosahedral arrangement.
    pub neutral_cable_length: f64,
    /// Rest length commanded in the neutral (pretensioned) posture.
    pub neutral_rest_length: f64,
    pub rest_length_bounds: (f64, f64),
    /// `node_bar[n]` is the bar containing node `n`.
    pub node_bar: Vec<usize>,
}

/// Builds the fixed 6-bar / 24-cable model from a parameter set.
pub fn build_robot(params: PhysicalParams) -> Result<RobotModel> {
    params.validate()?;
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    // Bars span 2φ in the unit icosahedron.
    let scale = params.bar_length / (2.0 * phi);

    let mut nodes = Vec::with_capacity(NUM_NODES);
    for class in 0..3 {
        for a in [1.0, -1.0] {
            for b in [phi, -phi] {
                let p = match class {
                    0 => Vec3::new(0.0, a, b),
                    1 => Vec3::new(b, 0.0, a),
                    _ => Vec3::new(a, b, 0.0),
                };
                nodes.push(p * scale);
            }
        }
    }

    // Node 4c + 2ia + ib: bars pair ib = 0/1, virtual edges pair ia = 0/1.
    let bars: Vec<Edge> = (0..3)
        .flat_map(|c| [(4 * c, 4 * c + 1), (4 * c + 2, 4 * c + 3)])
        .collect();
    let virtual_edges: Vec<Edge> = (0..3)
        .flat_map(|c| [(4 * c, 4 * c + 2), (4 * c + 1, 4 * c + 3)])
        .collect();

    let edge_len = 2.0 * scale;
    let is_hull_edge =
        |i: usize, j: usize| ((nodes[i] - nodes[j]).norm() - edge_len).abs() < 1e-9 * edge_len;

    let mut hull_edges = Vec::new();
    for i in 0..NUM_NODES {
        for j in (i + 1)..NUM_NODES {
            if is_hull_edge(i, j) {
                hull_edges.push((i, j));
            }
        }
    }
    if hull_edges.len() != 30 {
        return Err(Error::Geometry(format!(
            "expected 30 hull edges, found {}",
            hull_edges.len()
        )));
    }
    let cables: Vec<Edge> = hull_edges
        .iter()
        .copied()
        .filter(|e| !virtual_edges.contains(e))
        .collect();

    let mut faces = Vec::with_capacity(NUM_FACES);
    for i in 0..NUM_NODES {
        for j in (i + 1)..NUM_NODES {
            for k in (j + 1)..NUM_NODES {
                if !(is_hull_edge(i, j) && is_hull_edge(j, k) && is_hull_edge(i, k)) {
                    continue;
                }
                let (a, mut b, mut c) = (i, j, k);
                let centroid = (nodes[a] + nodes[b] + nodes[c]) / 3.0;
                if (nodes[b] - nodes[a]).cross(&(nodes[c] - nodes[a])).dot(&centroid) < 0.0 {
                    std::mem::swap(&mut b, &mut c);
                }
                let mut tri = [a, b, c];
                let virtual_slot = (0..3)
                    .find(|&s| virtual_edges.contains(&edge(tri[s], tri[(s + 1) % 3])));
                let kind = match virtual_slot {
                    Some(s) => {
                        tri.rotate_left(s);
                        FaceKind::Lambda
                    }
                    None => FaceKind::Delta,
                };
                faces.push(Face { nodes: tri, kind });
            }
        }
    }

    let mut node_bar = vec![usize::MAX; NUM_NODES];
    for (b, &(i, j)) in bars.iter().enumerate() {
        node_bar[i] = b;
        node_bar[j] = b;
    }

    let (lo, hi) = params.rest_length_bounds_ratio;
    let model = RobotModel {
        neutral_cable_length: edge_len,
        neutral_rest_length: params.pretension_ratio * edge_len,
        rest_length_bounds: (lo * edge_len, hi * edge_len),
        node_positions_neutral: nodes,
        bars,
        cables,
        virtual_edges,
        faces,
        node_bar,
        params,
    };
    model.check_structure()?;
    Ok(model)
}

impl RobotModel {
    pub fn default_model() -> Self {
        build_robot(PhysicalParams::default()).expect("default parameters are valid")
    }

    /// Verifies every structural invariant of the topology.
    pub fn check_structure(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Geometry(msg));
        if self.node_positions_neutral.len() != NUM_NODES
            || self.bars.len() != NUM_BARS
            || self.cables.len() != NUM_CABLES
            || self.faces.len() != NUM_FACES
        {
            return fail(format!(
                "counts: {} nodes, {} bars, {} cables, {} faces",
                self.node_positions_neutral.len(),
                self.bars.len(),
                self.cables.len(),
                self.faces.len()
            ));
        }
        let deltas = self.faces.iter().filter(|f| f.kind == FaceKind::Delta).count();
        if deltas != 8 {
            return fail(format!("{deltas} delta faces"));
        }
        for n in 0..NUM_NODES {
            let in_bars = self.bars.iter().filter(|b| b.0 == n || b.1 == n).count();
            let in_cables = self.cables.iter().filter(|c| c.0 == n || c.1 == n).count();
            if in_bars != 1 || in_cables != 4 {
                return fail(format!("node {n}: {in_bars} bars, {in_cables} cables"));
            }
        }
        for (id, f) in self.faces.iter().enumerate() {
            let virtual_count = (0..3)
                .filter(|&s| self.virtual_edges.contains(&f.edge(s)))
                .count();
            let expected = match f.kind {
                FaceKind::Delta => 0,
                FaceKind::Lambda => 1,
            };
            if virtual_count != expected {
                return fail(format!("face {id} has {virtual_count} virtual edges"));
            }
        }
        for (b, &(i, j)) in self.bars.iter().enumerate() {
            let d = (self.node_positions_neutral[i] - self.node_positions_neutral[j]).norm();
            if (d - self.params.bar_length).abs() > 1e-9 {
                return fail(format!("bar {b} has neutral length {d}"));
            }
        }
        Ok(())
    }

    pub fn cable_index(&self, e: Edge) -> Option<usize> {
        let e = edge(e.0, e.1);
        self.cables.iter().position(|&c| c == e)
    }

    pub fn is_virtual(&self, e: Edge) -> bool {
        self.virtual_edges.contains(&edge(e.0, e.1))
    }

    /// Shared edge of two distinct faces, if they are adjacent.
    pub fn shared_edge(&self, a: FaceId, b: FaceId) -> Option<Edge> {
        if a == b {
            return None;
        }
        let fa = &self.faces[a];
        let fb = &self.faces[b];
        let common: Vec<NodeId> = fa.nodes.iter().copied().filter(|n| fb.contains(*n)).collect();
        (common.len() == 2).then(|| edge(common[0], common[1]))
    }

    /// The face that shares `e` with `face`, if any.
    pub fn face_across(&self, face: FaceId, e: Edge) -> Option<FaceId> {
        let e = edge(e.0, e.1);
        (0..NUM_FACES).find(|&g| g != face && self.faces[g].edge_slot(e).is_some())
    }

    pub fn clamp_rest_length(&self, length: f64) -> f64 {
        length.clamp(self.rest_length_bounds.0, self.rest_length_bounds.1)
    }

    pub fn total_mass(&self) -> f64 {
        self.params.node_mass * NUM_NODES as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_counts() {
        let m = RobotModel::default_model();
        assert_eq!(m.node_positions_neutral.len(), 12);
        assert_eq!(m.bars.len(), 6);
        assert_eq!(m.cables.len(), 24);
        let lambdas = m.faces.iter().filter(|f| f.kind == FaceKind::Lambda).count();
        assert_eq!(lambdas, 12);
    }

    #[test]
    fn neutral_cable_lengths_equal() {
        let m = RobotModel::default_model();
        for &(i, j) in &m.cables {
            let d = (m.node_positions_neutral[i] - m.node_positions_neutral[j]).norm();
            assert!((d - m.neutral_cable_length).abs() < 1e-9);
        }
    }

    #[test]
    fn bars_are_parallel_pairs() {
        let m = RobotModel::default_model();
        for pair in m.bars.chunks(2) {
            let d0 = m.node_positions_neutral[pair[0].1] - m.node_positions_neutral[pair[0].0];
            let d1 = m.node_positions_neutral[pair[1].1] - m.node_positions_neutral[pair[1].0];
            assert!(d0.cross(&d1).norm() < 1e-12);
        }
    }

    #[test]
    fn faces_are_outward() {
        let m = RobotModel::default_model();
        for f in &m.faces {
            let p: Vec<Vec3> = f.nodes.iter().map(|&n| m.node_positions_neutral[n]).collect();
            let c = (p[0] + p[1] + p[2]) / 3.0;
            assert!((p[1] - p[0]).cross(&(p[2] - p[0])).dot(&c) > 0.0);
        }
    }

    #[test]
    fn delta_faces_never_share_edges() {
        let m = RobotModel::default_model();
        for a in 0..NUM_FACES {
            for b in 0..NUM_FACES {
                if m.faces[a].kind == FaceKind::Delta && m.faces[b].kind == FaceKind::Delta {
                    assert!(m.shared_edge(a, b).is_none());
                }
            }
        }
    }

    #[test]
    fn rejects_non_positive_parameters() {
        let mut p = PhysicalParams::default();
        p.node_mass = 0.0;
        assert!(matches!(build_robot(p), Err(Error::InvalidParameter { name: "node_mass", .. })));
        let mut p = PhysicalParams::default();
        p.bar_length = -1.0;
        assert!(build_robot(p).is_err());
        let mut p = PhysicalParams::default();
        p.cable_stiffness = f64::NAN;
        assert!(build_robot(p).is_err());
    }
}
