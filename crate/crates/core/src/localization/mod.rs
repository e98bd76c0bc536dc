//! Post-hoc organization of sampled trajectories: segments, classes, warped
//! time, reduced states and multi-modal linear surrogate models.

pub mod models;
pub mod ransac;
pub mod segment;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rollout::Trajectory;
use crate::sim::model::{FaceKind, RobotModel, NUM_CABLES, NUM_NODES};
use crate::sim::FullState;
use crate::symmetry::{canonical_direction, canonicalize_state, ReductionFrame, Symmetry};

pub use models::{write_census_csv, CellModels, ClassCensus, ClassModels, SurrogateModelSet};
pub use ransac::{assign_mode, fit_multimodal, Mode, PointSet, RansacConfig};
pub use segment::{
    classify_segment, segment_trajectory, warp_segment, warped_index, Crossing, EdgeType, Partial, PartialKind,
    Segment, SegmentClass, Segmentation, DEFAULT_TRUNCATION_CAP,
};

/// Which parts of the state the surrogate dynamics see.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[derive(Default)]
pub enum Reduction {
    #[serde(rename = "com-vel-only")]
    ComVelOnly,
    #[serde(rename = "nodes-lower6")]
    NodesLower6,
    #[serde(rename = "nodes")]
    #[default]
    Nodes,
    #[serde(rename = "nodes+vels")]
    NodesVels,
    #[serde(rename = "nodes+cables")]
    NodesCables,
}

impl Reduction {
    pub const ALL: [Reduction; 5] =
        [Self::ComVelOnly, Self::NodesLower6, Self::Nodes, Self::NodesVels, Self::NodesCables];

    pub fn name(&self) -> &'static str {
        match self {
            Self::ComVelOnly => "com-vel-only",
            Self::NodesLower6 => "nodes-lower6",
            Self::Nodes => "nodes",
            Self::NodesVels => "nodes+vels",
            Self::NodesCables => "nodes+cables",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::ComVelOnly => 3,
            Self::NodesLower6 => 3 + 18,
            Self::Nodes => 3 + 3 * NUM_NODES,
            Self::NodesVels => 3 + 6 * NUM_NODES,
            Self::NodesCables => 3 + 3 * NUM_NODES + NUM_CABLES,
        }
    }
}


impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|r| r.name() == s).ok_or_else(|| Error::UnknownReduction(s.to_string()))
    }
}

/// Reduced state: canonical CoM velocity first, then the chosen extras.
pub fn reduce_state(
    sym: &Symmetry,
    model: &RobotModel,
    state: &FullState,
    frame: &ReductionFrame,
    choice: Reduction,
) -> Vec<f64> {
    let c = canonicalize_state(sym, state, frame);
    let com = c.com();
    let vcom = c.com_velocity();
    let mut out = Vec::with_capacity(choice.dim());
    out.extend_from_slice(vcom.as_slice());
    let push_pos = |out: &mut Vec<f64>, n: usize| out.extend_from_slice((c.node_pos[n] - com).as_slice());
    match choice {
        Reduction::ComVelOnly => {}
        Reduction::NodesLower6 => {
            let kind: FaceKind = frame.kind(model);
            for &n in sym.lower_nodes(kind) {
                push_pos(&mut out, n);
            }
        }
        Reduction::Nodes | Reduction::NodesVels | Reduction::NodesCables => {
            for n in 0..NUM_NODES {
                push_pos(&mut out, n);
            }
        }
    }
    match choice {
        Reduction::NodesVels => {
            for n in 0..NUM_NODES {
                out.extend_from_slice((c.node_vel[n] - vcom).as_slice());
            }
        }
        Reduction::NodesCables => out.extend_from_slice(&c.rest_lengths),
        _ => {}
    }
    debug_assert_eq!(out.len(), choice.dim());
    out
}

/// One transition in canonical coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedPoint {
    pub x: Vec<f64>,
    /// Canonical command.
    pub u: Vec<f64>,
    /// Next reduced state, in the frame of the next step.
    pub x_next: Vec<f64>,
    /// Target direction in the frame of `x_next`, for its running cost.
    pub dir_next: [f64; 3],
}

/// Reduced transitions of every step of a trajectory.
pub fn reduce_trajectory(sym: &Symmetry, model: &RobotModel, traj: &Trajectory, choice: Reduction) -> Vec<ReducedPoint> {
    let mut xs: Vec<Vec<f64>> = (0..=traj.len())
        .map(|t| {
            let (s, _, f) = traj.state_at(t);
            reduce_state(sym, model, s, f, choice)
        })
        .collect();
    let mut out = Vec::with_capacity(traj.len());
    for t in (0..traj.len()).rev() {
        let st = &traj.steps[t];
        let x_next = xs.pop().expect("one more state than steps");
        let next_frame = traj.state_at(t + 1).2;
        let d = canonical_direction(next_frame, st.target_dir);
        out.push(ReducedPoint {
            x: xs[t].clone(),
            u: st.canonical_control.as_slice().to_vec(),
            x_next,
            dir_next: [d.x, d.y, d.z],
        });
    }
    out.reverse();
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationConfig {
    pub truncation_cap: usize,
    pub min_warped_length: usize,
    /// Overrides the per-class median segment length.
    pub fixed_warped_length: Option<usize>,
    pub reduction: Reduction,
    pub ransac: RansacConfig,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            truncation_cap: DEFAULT_TRUNCATION_CAP,
            min_warped_length: 5,
            fixed_warped_length: None,
            reduction: Reduction::Nodes,
            ransac: RansacConfig::default(),
        }
    }
}

/// Where a step's surrogate model lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepBinding {
    pub class: usize,
    pub cell: usize,
    /// False for steps past the truncation cap, which borrow the last cell.
    pub in_segment: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedSegment {
    pub segment: Segment,
    pub class: usize,
}

/// Segmentation, classification and warping of one iteration's samples.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Localization {
    pub classes: Vec<SegmentClass>,
    /// Warped length of each class.
    pub warped_lengths: Vec<usize>,
    pub segments: Vec<ClassifiedSegment>,
    /// Per trajectory (in input order), per step.
    pub bindings: Vec<Vec<StepBinding>>,
    pub points: Vec<Vec<ReducedPoint>>,
    pub discarded: usize,
    pub total_steps: usize,
}

impl Localization {
    pub fn segment_steps(&self) -> usize {
        self.segments.iter().map(|s| s.segment.len()).sum()
    }

    pub fn class_index(&self, class: &SegmentClass) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }
}

fn median(v: &mut [usize]) -> usize {
    v.sort_unstable();
    v[v.len() / 2]
}

/// Segments, classifies, warps and reduces the trajectories.
pub fn localize(
    trajs: &[Trajectory],
    model: &RobotModel,
    sym: &Symmetry,
    cfg: &LocalizationConfig,
) -> Result<Localization> {
    let mut by_class: BTreeMap<SegmentClass, Vec<(usize, Segment)>> = BTreeMap::new();
    let mut discarded = 0;
    for (ti, tr) in trajs.iter().enumerate() {
        let seg = segment_trajectory(tr, cfg.truncation_cap);
        discarded += seg.discarded;
        for s in seg.segments {
            by_class.entry(classify_segment(&s, model, sym)?).or_default().push((ti, s));
        }
    }

    let cap = cfg.truncation_cap.max(1);
    let lo = cfg.min_warped_length.clamp(1, cap);
    let mut classes = Vec::new();
    let mut warped_lengths = Vec::new();
    let mut segments = Vec::new();
    let mut bindings: Vec<Vec<Option<StepBinding>>> = trajs.iter().map(|t| vec![None; t.len()]).collect();
    for (ci, (class, segs)) in by_class.into_iter().enumerate() {
        let mut lens: Vec<usize> = segs.iter().map(|(_, s)| s.len()).collect();
        let tx = cfg.fixed_warped_length.unwrap_or_else(|| median(&mut lens)).clamp(lo, cap);
        for (ti, s) in segs {
            let n = s.len();
            for (k, b) in bindings[ti][s.start..s.end].iter_mut().enumerate() {
                *b = Some(StepBinding { class: ci, cell: warped_index(k, n, tx), in_segment: true });
            }
            if s.partial == Partial::Truncated {
                let tail = trajs[ti].steps.iter().skip(s.end).take_while(|st| st.bottom_face == s.bottom_face).count();
                for b in &mut bindings[ti][s.end..s.end + tail] {
                    *b = Some(StepBinding { class: ci, cell: tx - 1, in_segment: false });
                }
            }
            segments.push(ClassifiedSegment { segment: s, class: ci });
        }
        classes.push(class);
        warped_lengths.push(tx);
    }
    segments.sort_by_key(|s| (s.segment.trajectory, s.segment.start));

    let bindings = bindings
        .into_iter()
        .map(|v| v.into_iter().collect::<Option<Vec<_>>>())
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Internal("a trajectory step was left without a segment binding".into()))?;

    let points: Vec<Vec<ReducedPoint>> = {
        use rayon::prelude::*;
        trajs.par_iter().map(|t| reduce_trajectory(sym, model, t, cfg.reduction)).collect()
    };

    Ok(Localization {
        classes,
        warped_lengths,
        segments,
        bindings,
        points,
        discarded,
        total_steps: trajs.iter().map(|t| t.len()).sum(),
    })
}
