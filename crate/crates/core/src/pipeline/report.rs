//! Per-iteration reports. Everything in [`TrajectoryStats`] can be recomputed
//! from the logged trajectory CSVs.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localization::ClassCensus;
use crate::rollout::Trajectory;
use crate::scenario::waypoints::TargetEvent;
use crate::trajopt::OptimizerReport;

/// CoM speed below which a step counts as stuck (m/s).
pub const STUCK_SPEED: f64 = 0.05;
/// Forward-speed histogram: `SPEED_BINS` bins of `SPEED_BIN_WIDTH` starting at
/// `SPEED_HIST_MIN`; values outside land in the end bins.
pub const SPEED_HIST_MIN: f64 = -0.5;
pub const SPEED_BIN_WIDTH: f64 = 0.1;
pub const SPEED_BINS: usize = 20;

fn speed_bin(v: f64) -> usize {
    (((v - SPEED_HIST_MIN) / SPEED_BIN_WIDTH).floor().max(0.0) as usize).min(SPEED_BINS - 1)
}

/// One step as seen by the statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
struct StepSample {
    cost: f64,
    heading: f64,
    end_vel: [f64; 3],
    arrival: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    pub rollouts: usize,
    pub steps: usize,
    pub mean_cost: f64,
    /// Mean of `v_CoM · d̂` with the end-of-period velocity.
    pub mean_forward_speed: f64,
    pub stuck_fraction: f64,
    pub arrivals: usize,
    /// Step counts per forward-speed bin.
    pub speed_histogram: Vec<usize>,
}

impl TrajectoryStats {
    fn from_samples(rollouts: &[Vec<StepSample>]) -> Self {
        let mut s = Self { rollouts: rollouts.len(), speed_histogram: vec![0; SPEED_BINS], ..Self::default() };
        let (mut cost, mut speed, mut stuck) = (0.0, 0.0, 0usize);
        for st in rollouts.iter().flatten() {
            let v = st.end_vel;
            let fwd = v[0] * st.heading.cos() + v[1] * st.heading.sin();
            cost += st.cost;
            speed += fwd;
            stuck += ((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() < STUCK_SPEED) as usize;
            s.arrivals += st.arrival as usize;
            s.speed_histogram[speed_bin(fwd)] += 1;
            s.steps += 1;
        }
        if s.steps > 0 {
            let n = s.steps as f64;
            s.mean_cost = cost / n;
            s.mean_forward_speed = speed / n;
            s.stuck_fraction = stuck as f64 / n;
        }
        s
    }

    pub fn from_trajectories(trajs: &[Trajectory]) -> Self {
        let samples: Vec<Vec<StepSample>> = trajs
            .iter()
            .map(|tr| {
                tr.steps
                    .iter()
                    .enumerate()
                    .map(|(t, st)| StepSample {
                        cost: st.cost,
                        heading: st.target_dir.y.atan2(st.target_dir.x),
                        end_vel: tr.state_at(t + 1).0.com_velocity().into(),
                        arrival: matches!(st.event, Some(TargetEvent::Arrival(_))),
                    })
                    .collect()
            })
            .collect();
        Self::from_samples(&samples)
    }

    /// Recomputes the statistics from trajectory CSVs.
    pub fn from_csv_readers<R: Read>(readers: Vec<R>) -> Result<Self> {
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        let mut samples = Vec::new();
        for r in readers {
            let mut rd = csv::Reader::from_reader(r);
            let header = rd.headers().map_err(csv_err)?.clone();
            let col = |name: &str| {
                header.iter().position(|h| h == name).ok_or_else(|| Error::Config(format!("missing column `{name}`")))
            };
            let (ic, ih, ie) = (col("cost")?, col("target_heading")?, col("event")?);
            let iv = [col("end_com_vx")?, col("end_com_vy")?, col("end_com_vz")?];
            let mut rows = Vec::new();
            for rec in rd.records() {
                let rec = rec.map_err(csv_err)?;
                let num = |i: usize| -> Result<f64> {
                    rec[i].parse().map_err(|_| Error::Config(format!("bad number `{}`", &rec[i])))
                };
                rows.push(StepSample {
                    cost: num(ic)?,
                    heading: num(ih)?,
                    end_vel: [num(iv[0])?, num(iv[1])?, num(iv[2])?],
                    arrival: rec[ie].starts_with("arrival"),
                });
            }
            samples.push(rows);
        }
        Ok(Self::from_samples(&samples))
    }

    pub fn from_csv_files(paths: &[impl AsRef<Path>]) -> Result<Self> {
        let files = paths.iter().map(|p| std::fs::File::open(p.as_ref())).collect::<std::io::Result<Vec<_>>>()?;
        Self::from_csv_readers(files)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub pairs: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub accepted_steps: usize,
    /// Largest relative error of the pre-training gradient check.
    pub grad_check_max_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub noise_scale: f64,
    pub stats: TrajectoryStats,
    pub segments: usize,
    pub discarded_steps: usize,
    pub classes: usize,
    pub total_modes: usize,
    pub census: Vec<ClassCensus>,
    pub optimizer: OptimizerReport,
    pub training: Option<TrainingSummary>,
    /// KL weight for the next iteration.
    pub next_kl_weight: f64,
    pub wall_time_s: f64,
    /// Set when the iteration aborted part-way.
    pub error: Option<String>,
}

impl IterationReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Flat per-iteration summary row of `reports.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub iteration: usize,
    pub noise_scale: f64,
    pub kl_weight: f64,
    pub steps: usize,
    pub mean_cost: f64,
    pub mean_forward_speed: f64,
    pub stuck_fraction: f64,
    pub arrivals: usize,
    pub segments: usize,
    pub discarded_steps: usize,
    pub classes: usize,
    pub total_modes: usize,
    pub subtrajectories: usize,
    pub skipped: usize,
    pub fallback_models: usize,
    pub pairs: usize,
    pub final_loss: f64,
    pub wall_time_s: f64,
}

impl From<&IterationReport> for ReportRow {
    fn from(r: &IterationReport) -> Self {
        Self {
            iteration: r.iteration,
            noise_scale: r.noise_scale,
            kl_weight: r.optimizer.kl_weight,
            steps: r.stats.steps,
            mean_cost: r.stats.mean_cost,
            mean_forward_speed: r.stats.mean_forward_speed,
            stuck_fraction: r.stats.stuck_fraction,
            arrivals: r.stats.arrivals,
            segments: r.segments,
            discarded_steps: r.discarded_steps,
            classes: r.classes,
            total_modes: r.total_modes,
            subtrajectories: r.optimizer.subtrajectories,
            skipped: r.optimizer.skipped,
            fallback_models: r.optimizer.fallback_models,
            pairs: r.optimizer.pairs,
            final_loss: r.training.as_ref().map_or(f64::NAN, |t| t.final_loss),
            wall_time_s: r.wall_time_s,
        }
    }
}

pub fn write_reports_csv<W: Write>(w: W, reports: &[IterationReport]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in reports {
        wr.serialize(ReportRow::from(r)).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    wr.flush()?;
    Ok(())
}

/// True once the mean cost improved by less than `rel` over the last two iterations.
pub fn plateaued(costs: &[f64], rel: f64) -> bool {
    let n = costs.len();
    if n < 3 {
        return false;
    }
    let (old, new) = (costs[n - 3], costs[n - 1]);
    old <= 0.0 || (old - new) / old < rel
}
