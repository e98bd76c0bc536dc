//! Cutting trajectories into constant-bottom-face segments, classifying
//! them, and stretching them onto a common time axis.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rollout::Trajectory;
use crate::sim::model::{Edge, FaceId, FaceKind, RobotModel};
use crate::symmetry::{frame_map, Symmetry};

pub const DEFAULT_TRUNCATION_CAP: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Partial {
    None,
    /// Starts with the trajectory rather than an edge crossing.
    Leading,
    /// Ends with the trajectory rather than an edge crossing.
    Trailing,
    /// First `truncation_cap` steps of an over-long run.
    Truncated,
}

/// How the robot got onto or off a face.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Crossing {
    Edge(Edge),
    /// The faces share no edge.
    Jump,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub trajectory: usize,
    /// First step index.
    pub start: usize,
    /// One past the last step index.
    pub end: usize,
    pub bottom_face: FaceId,
    /// Face occupied before the segment, if it began with a crossing.
    pub entry_from: Option<FaceId>,
    /// Face occupied after the segment, if it ended with a crossing.
    pub exit_to: Option<FaceId>,
    pub partial: Partial,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn entry_edge(&self, model: &RobotModel) -> Option<Crossing> {
        self.entry_from.map(|p| crossing(model, p, self.bottom_face))
    }

    pub fn exit_edge(&self, model: &RobotModel) -> Option<Crossing> {
        self.exit_to.map(|n| crossing(model, self.bottom_face, n))
    }

    /// Face the reduction frame treats as the entry; the segment's own face when there is none.
    pub fn frame_previous(&self) -> FaceId {
        self.entry_from.unwrap_or(self.bottom_face)
    }
}

fn crossing(model: &RobotModel, a: FaceId, b: FaceId) -> Crossing {
    model.shared_edge(a, b).map_or(Crossing::Jump, Crossing::Edge)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    pub segments: Vec<Segment>,
    /// Steps past the truncation cap that belong to no segment.
    pub discarded: usize,
}

/// Splits a trajectory into maximal runs of constant bottom face.
pub fn segment_trajectory(traj: &Trajectory, truncation_cap: usize) -> Segmentation {
    let cap = truncation_cap.max(1);
    let n = traj.steps.len();
    let mut runs: Vec<(usize, usize, FaceId)> = Vec::new();
    let mut a = 0;
    for t in 1..=n {
        if t == n || traj.steps[t].bottom_face != traj.steps[a].bottom_face {
            runs.push((a, t, traj.steps[a].bottom_face));
            a = t;
        }
    }

    let mut out = Segmentation::default();
    for (r, &(a, b, face)) in runs.iter().enumerate() {
        let entry_from = (r > 0).then(|| runs[r - 1].2);
        let exit_to = if r + 1 < runs.len() {
            Some(runs[r + 1].2)
        } else {
            (traj.final_face != face).then_some(traj.final_face)
        };
        let mut seg = Segment {
            trajectory: traj.id,
            start: a,
            end: b,
            bottom_face: face,
            entry_from,
            exit_to,
            partial: if exit_to.is_none() {
                Partial::Trailing
            } else if entry_from.is_none() {
                Partial::Leading
            } else {
                Partial::None
            },
        };
        if seg.len() > cap {
            out.discarded += seg.len() - cap;
            seg.end = a + cap;
            seg.exit_to = None;
            seg.partial = Partial::Truncated;
        }
        out.segments.push(seg);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeType {
    None,
    /// Non-adjacent face change.
    Jump,
    Cable,
    Virtual,
    /// Leaves over the edge it came in by.
    Back,
    /// Δ exit over the canonical slot-1 edge.
    Left,
    /// Δ exit over the canonical slot-2 edge.
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PartialKind {
    Complete,
    Partial,
    Truncated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SegmentClass {
    pub face_type: FaceKind,
    pub entry: EdgeType,
    pub exit: EdgeType,
    pub partial: PartialKind,
}

impl SegmentClass {
    pub fn label(&self) -> String {
        format!("{:?}/{:?}/{:?}/{:?}", self.face_type, self.entry, self.exit, self.partial)
    }
}

/// Class of a segment. Exit edges are named relative to the entry edge in the
/// canonical frame, so symmetric copies of a segment share a class.
pub fn classify_segment(seg: &Segment, model: &RobotModel, sym: &Symmetry) -> Result<SegmentClass> {
    let kind = model.faces[seg.bottom_face].kind;
    let partial = match seg.partial {
        Partial::None => PartialKind::Complete,
        Partial::Leading | Partial::Trailing => PartialKind::Partial,
        Partial::Truncated => PartialKind::Truncated,
    };
    let entry = match seg.entry_edge(model) {
        None => EdgeType::None,
        Some(Crossing::Jump) => EdgeType::Jump,
        Some(Crossing::Edge(e)) if model.is_virtual(e) => EdgeType::Virtual,
        Some(Crossing::Edge(_)) => EdgeType::Cable,
    };
    let exit = match seg.exit_edge(model) {
        None => EdgeType::None,
        Some(Crossing::Jump) => EdgeType::Jump,
        Some(Crossing::Edge(e)) => {
            let (k, _) = frame_map(sym, model, seg.bottom_face, seg.frame_previous())?;
            let canon = &model.faces[sym.canonical_face(kind)];
            let slot = canon.edge_slot(sym.maps[k].map_edge(e)).expect("exit edge lies on the face");
            match (kind, entry) {
                (FaceKind::Delta, EdgeType::Cable) => [EdgeType::Back, EdgeType::Left, EdgeType::Right][slot],
                (FaceKind::Lambda, EdgeType::Cable) => [EdgeType::Virtual, EdgeType::Back, EdgeType::Cable][slot],
                // The Λ stabilizer swaps its two cable edges.
                (FaceKind::Lambda, EdgeType::Virtual) if slot == 0 => EdgeType::Back,
                _ if model.is_virtual(e) => EdgeType::Virtual,
                _ => EdgeType::Cable,
            }
        }
    };
    Ok(SegmentClass { face_type: kind, entry, exit, partial })
}

/// Uniform stretch: source index for each of the `warped_length` class steps.
pub fn warp_segment(seg: &Segment, warped_length: usize) -> Vec<usize> {
    let n = seg.len();
    let tx = warped_length.max(1);
    (0..tx).map(|k| seg.start + k * n / tx).collect()
}

/// Class step of the segment step at offset `k`; every offset gets exactly one.
pub fn warped_index(k: usize, n: usize, warped_length: usize) -> usize {
    (k * warped_length / n.max(1)).min(warped_length.saturating_sub(1))
}
