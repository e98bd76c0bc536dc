//! Zero-noise evaluation episodes with ground tracks and bottom-node footprints.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{derive_seed, RunConfig};
use super::report::{IterationReport, TrajectoryStats};
use super::t6gps::{Setup, TAG_EVAL, TAG_INIT, TAG_SCENARIO};
use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::rollout::{rollout, Trajectory};
use crate::scenario::initial::{sample_initial_states, InitialStateConfig};
use crate::scenario::track::{write_ground_track, TrackPoint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub steps: usize,
    pub mean_cost: f64,
    pub mean_forward_speed: f64,
    pub arrivals: usize,
    /// Horizontal CoM distance between start and end (m).
    pub displacement: f64,
    pub waypoints: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub seed: u64,
    pub terrain_seed: u64,
    pub report: IterationReport,
    pub episodes: Vec<EpisodeSummary>,
}

impl EvaluationReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

pub fn ground_track(traj: &Trajectory) -> Vec<TrackPoint> {
    let mut pts: Vec<TrackPoint> = traj
        .steps
        .iter()
        .map(|s| TrackPoint { time: s.state.sim_time, com: s.state.com(), active_waypoint: s.active_waypoint, event: s.event })
        .collect();
    let last = traj.steps.last().map_or(0, |s| s.active_waypoint);
    pts.push(TrackPoint { time: traj.final_state.sim_time, com: traj.final_state.com(), active_waypoint: last, event: None });
    pts
}

/// One row per bottom-face node per step.
pub fn write_footprints<W: Write>(w: W, setup: &Setup, trajs: &[Trajectory]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    out.write_record(["episode", "step", "time", "face", "node", "x", "y", "z"]).map_err(csv_err)?;
    for tr in trajs {
        for (t, s) in tr.steps.iter().enumerate() {
            for &n in &setup.model.faces[s.bottom_face].nodes {
                let p = s.state.node_pos[n];
                out.write_record([
                    tr.id.to_string(),
                    t.to_string(),
                    format!("{:.4}", s.state.sim_time),
                    s.bottom_face.to_string(),
                    n.to_string(),
                    format!("{:.6}", p.x),
                    format!("{:.6}", p.y),
                    format!("{:.6}", p.z),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Runs `episodes` noise-free episodes of `policy` on the terrain of
/// `terrain_seed`, from start states and waypoints drawn from `(seed, terrain_seed)`.
pub fn evaluate(
    cfg: &RunConfig,
    policy: &PolicyParams,
    episodes: usize,
    terrain_seed: u64,
    out: Option<&Path>,
) -> Result<EvaluationReport> {
    if episodes == 0 {
        return Err(Error::InvalidParameter { name: "episodes", reason: "must be positive".into() });
    }
    let setup = Setup::with_terrain_seed(cfg, terrain_seed)?;
    let seed = derive_seed(cfg.seed, TAG_EVAL, terrain_seed);
    let starts = sample_initial_states(
        episodes,
        derive_seed(seed, TAG_INIT, 0),
        &setup.terrain,
        &setup.model,
        &InitialStateConfig::default(),
    )?;
    let world = setup.world(cfg);
    let trajs: Vec<Trajectory> = starts
        .par_iter()
        .enumerate()
        .map(|(k, x0)| {
            let scn = setup.scenario(cfg, x0, derive_seed(seed, TAG_SCENARIO, k as u64));
            let mut tr = rollout(&world, policy, x0, cfg.eval_horizon, &scn, 0.0, 0)?;
            tr.id = k;
            Ok(tr)
        })
        .collect::<Result<_>>()?;
    let episodes_summary: Vec<EpisodeSummary> = trajs
        .iter()
        .zip(&starts)
        .enumerate()
        .map(|(k, (tr, x0))| {
            let d = tr.final_state.com() - x0.com();
            EpisodeSummary {
                episode: k,
                steps: tr.len(),
                mean_cost: tr.mean_cost(),
                mean_forward_speed: tr.mean_forward_speed(),
                arrivals: tr.arrivals(),
                displacement: d.x.hypot(d.y),
                waypoints: setup.scenario(cfg, x0, derive_seed(seed, TAG_SCENARIO, k as u64)).waypoints,
            }
        })
        .collect();
    let report = IterationReport { stats: TrajectoryStats::from_trajectories(&trajs), ..Default::default() };
    let eval = EvaluationReport { seed: cfg.seed, terrain_seed, report, episodes: episodes_summary };
    if let Some(o) = out {
        let tracks = o.join("tracks");
        std::fs::create_dir_all(&tracks)?;
        for tr in &trajs {
            let f = std::fs::File::create(tracks.join(format!("episode_{:03}.csv", tr.id)))?;
            write_ground_track(std::io::BufWriter::new(f), &ground_track(tr))?;
        }
        write_footprints(std::io::BufWriter::new(std::fs::File::create(o.join("footprints.csv"))?), &setup, &trajs)?;
        eval.save_json(&o.join("evaluation.json"))?;
    }
    Ok(eval)
}
