//! Fixed-condition guided policy search on flat ground: one start state, `J`
//! target directions, and one time-varying linear model per direction fitted
//! over full-length samples in the world frame.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::config::{derive_seed, RunConfig};
use super::report::{plateaued, write_reports_csv, IterationReport, TrainingSummary, TrajectoryStats};
use super::t6gps::{check_gradients, write_trajectories, Setup, TrainingState, TAG_GRADCHECK, TAG_NOISE};
use crate::error::{Error, Result};
use crate::linalg::fit_affine;
use crate::localization::ReducedPoint;
use crate::policy::{train, PolicyCheckpoint};
use crate::rollout::{rollout, Trajectory};
use crate::scenario::terrain::Terrain;
use crate::scenario::waypoints::ScenarioState;
use crate::sim::engine::settle_neutral;
use crate::sim::model::NUM_NODES;
use crate::sim::{ControlCommand, FullState};
use crate::symmetry::canonicalize_control;
use crate::trajopt::{
    build_problem, lqg_backward_pass, predicted_cost_change, write_report_csv, ModelSeries, ModelSource,
    OptimizerReport, PatchedModel,
};

const START_FACE: usize = 0;
const PLATEAU_REL: f64 = 0.02;

/// World-frame state: CoM velocity, then node positions relative to the CoM.
pub fn world_state(x: &FullState) -> Vec<f64> {
    let com = x.com();
    let mut out = Vec::with_capacity(3 + 3 * NUM_NODES);
    out.extend_from_slice(x.com_velocity().as_slice());
    for p in &x.node_pos {
        out.extend_from_slice((p - com).as_slice());
    }
    out
}

/// World-frame transitions with physical commands.
pub fn world_points(traj: &Trajectory) -> Vec<ReducedPoint> {
    (0..traj.len())
        .map(|t| {
            let st = &traj.steps[t];
            ReducedPoint {
                x: world_state(&st.state),
                u: st.control.as_slice().to_vec(),
                x_next: world_state(traj.state_at(t + 1).0),
                dir_next: st.target_dir.into(),
            }
        })
        .collect()
}

/// Ridge fits of `x' ~ [x; u]` and `u ~ x` at every time step across samples.
pub fn fit_time_varying(samples: &[Vec<ReducedPoint>], ridge: f64, noise_floor: f64) -> ModelSeries {
    let h = samples[0].len();
    let n = samples[0][0].x.len();
    let m = samples[0][0].u.len();
    let k = samples.len();
    let idx: Vec<usize> = (0..k).collect();
    let steps = (0..h)
        .map(|t| {
            let xu = DMatrix::from_fn(k, n + m, |i, j| {
                let p = &samples[i][t];
                if j < n {
                    p.x[j]
                } else {
                    p.u[j - n]
                }
            });
            let xn = DMatrix::from_fn(k, n, |i, j| samples[i][t].x_next[j]);
            let dynf = fit_affine(&xu, &xn, &idx, ridge);
            let xs = xu.columns(0, n).into_owned();
            let us = xu.columns(n, m).into_owned();
            let pol = fit_affine(&xs, &us, &idx, ridge);
            let mut noise: DVector<f64> = DVector::zeros(m);
            for i in 0..k {
                let pred = pol.predict(&samples[i][t].x);
                for c in 0..m {
                    noise[c] += (samples[i][t].u[c] - pred[c]).powi(2) / k as f64;
                }
            }
            noise.apply(|v| *v = v.max(noise_floor).max(1e-12));
            PatchedModel {
                a: dynf.a.columns(0, n).into_owned(),
                b: dynf.a.columns(n, m).into_owned(),
                p_mat: pol.a,
                p_off: pol.offset,
                pol_noise: noise,
                source: ModelSource::TimeStep(t),
            }
        })
        .collect();
    ModelSeries { steps, fallbacks: 0 }
}

fn mean_points(samples: &[Vec<ReducedPoint>]) -> Vec<ReducedPoint> {
    let k = samples.len() as f64;
    let avg = |f: &dyn Fn(&ReducedPoint) -> &[f64], t: usize| -> Vec<f64> {
        let mut out = vec![0.0; f(&samples[0][t]).len()];
        for s in samples {
            for (o, v) in out.iter_mut().zip(f(&s[t])) {
                *o += v / k;
            }
        }
        out
    };
    (0..samples[0].len())
        .map(|t| ReducedPoint {
            x: avg(&|p| &p.x, t),
            u: avg(&|p| &p.u, t),
            x_next: avg(&|p| &p.x_next, t),
            dir_next: samples[0][t].dir_next,
        })
        .collect()
}

/// Outcome of the backward pass for one direction.
#[derive(Clone, Debug)]
pub struct DirectionUpdate {
    /// Canonical-frame training pairs; empty when the direction was skipped.
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
    pub skipped: bool,
    pub predicted_improvement: f64,
    pub mean_action_change: f64,
}

/// Fits the direction's model, solves about the sample mean and labels every
/// recorded step with `ū + k + K (x - x̄)`.
pub fn improve_direction(
    setup: &Setup,
    cfg: &RunConfig,
    trajs: &[Trajectory],
    kl_weight: f64,
    noise: f64,
) -> DirectionUpdate {
    let samples: Vec<Vec<ReducedPoint>> = trajs.iter().map(world_points).collect();
    let tcfg = cfg.trajopt(kl_weight, noise);
    let series = fit_time_varying(&samples, tcfg.fallback_ridge, tcfg.policy_noise_floor);
    let mean = mean_points(&samples);
    let cost = setup.cost_spec(cfg);
    let (stages, terminal) = build_problem(&mean, &series, &cost, kl_weight);
    let skip = DirectionUpdate { pairs: Vec::new(), skipped: true, predicted_improvement: 0.0, mean_action_change: 0.0 };
    let Ok(policy) = lqg_backward_pass(&stages, &terminal, tcfg.reg_init, tcfg.max_retries) else {
        return skip;
    };
    let u_bar: Vec<DVector<f64>> = mean.iter().map(|p| DVector::from_column_slice(&p.u)).collect();
    let change = predicted_cost_change(&stages, &terminal, &policy, &u_bar, Some(cost.bounds));
    if !(change <= 0.0) {
        return skip;
    }
    let (lo, hi) = cost.bounds;
    let mut pairs = Vec::new();
    let mut moved = 0.0;
    for (tr, pts) in trajs.iter().zip(&samples) {
        for (t, p) in pts.iter().enumerate() {
            let dx = DVector::from_column_slice(&p.x) - DVector::from_column_slice(&mean[t].x);
            let du = &policy.k[t] + &policy.gain[t] * dx;
            let u: Vec<f64> = (0..du.len()).map(|c| (mean[t].u[c] + du[c]).clamp(lo, hi)).collect();
            moved += u.iter().zip(&p.u).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let st = &tr.steps[t];
            let physical = ControlCommand::from_slice(&u).expect("24 commands");
            let canonical = canonicalize_control(&setup.sym, &physical, &st.frame);
            pairs.push((st.observation.clone(), canonical.as_slice().to_vec()));
        }
    }
    let count = pairs.len().max(1) as f64;
    DirectionUpdate { pairs, skipped: false, predicted_improvement: -change, mean_action_change: moved / count }
}

/// Settled start state at the terrain centre.
pub fn baseline_start(setup: &Setup) -> Result<FullState> {
    settle_neutral(&setup.model, &setup.terrain, START_FACE)
}

pub fn direction_heading(j: usize, directions: usize) -> f64 {
    std::f64::consts::TAU * j as f64 / directions as f64
}

fn baseline_iteration(
    cfg: &RunConfig,
    setup: &Setup,
    x0: &FullState,
    state: &TrainingState,
    dir: Option<&Path>,
    report: &mut IterationReport,
) -> Result<TrainingState> {
    let i = report.iteration;
    let noise = report.noise_scale;
    let world = setup.world(cfg);
    let jn = cfg.baseline_directions;
    let runs: Vec<(usize, usize)> = (0..jn).flat_map(|j| (0..cfg.samples).map(move |n| (j, n))).collect();
    let trajs: Vec<Trajectory> = runs
        .par_iter()
        .enumerate()
        .map(|(id, &(j, n))| {
            let mut scn = ScenarioState::fixed_direction(direction_heading(j, jn));
            scn.v_star = cfg.target_speed;
            scn.weights = cfg.cost_weights();
            let key = ((i as u64) << 32) | ((j as u64) << 16) | n as u64;
            let mut tr = rollout(&world, &state.policy, x0, cfg.horizon, &scn, noise, derive_seed(cfg.seed, TAG_NOISE, key))?;
            tr.id = id;
            Ok(tr)
        })
        .collect::<Result<_>>()?;
    report.stats = TrajectoryStats::from_trajectories(&trajs);
    log::info!("baseline iteration {i}: mean cost {:.4}", report.stats.mean_cost);
    if let (Some(d), true) = (dir, cfg.log_trajectories) {
        write_trajectories(d, &trajs)?;
    }

    let updates: Vec<DirectionUpdate> = trajs
        .par_chunks(cfg.samples)
        .map(|chunk| improve_direction(setup, cfg, chunk, state.kl_weight, noise))
        .collect();
    let mut opt = OptimizerReport { iteration: i, kl_weight: state.kl_weight, subtrajectories: jn, ..Default::default() };
    let accepted: Vec<&DirectionUpdate> = updates.iter().filter(|u| !u.skipped).collect();
    opt.skipped = jn - accepted.len();
    opt.skipped_no_improvement = opt.skipped;
    if !accepted.is_empty() {
        let k = accepted.len() as f64;
        opt.mean_predicted_improvement = accepted.iter().map(|u| u.predicted_improvement).sum::<f64>() / k;
        opt.mean_action_change = accepted.iter().map(|u| u.mean_action_change).sum::<f64>() / k;
    }
    let mut next = state.clone();
    next.iteration = i;
    for u in &accepted {
        for (y, c) in &u.pairs {
            next.data.push(y.clone(), c.clone(), i)?;
        }
        opt.pairs += u.pairs.len();
    }
    report.optimizer = opt;
    if let Some(d) = dir {
        write_report_csv(std::fs::File::create(d.join("optimizer.csv"))?, std::slice::from_ref(&report.optimizer))?;
    }
    next.data.prune();
    if !next.data.is_empty() {
        let grad_err = check_gradients(&next.policy, &next.data, derive_seed(cfg.seed, TAG_GRADCHECK, i as u64));
        let (policy, tr) = train(&next.policy, &next.data, &cfg.train())?;
        report.training = Some(TrainingSummary {
            pairs: next.data.len(),
            initial_loss: tr.initial_loss,
            final_loss: tr.final_loss,
            accepted_steps: tr.losses.len() - 1,
            grad_check_max_error: grad_err,
        });
        next.policy = policy;
    }
    if let Some(d) = dir {
        PolicyCheckpoint::new(next.policy.clone()).save(&d.join("policy.json"))?;
    }
    if report.optimizer.skip_fraction() > cfg.kl_skip_threshold {
        next.kl_weight *= 0.5;
    }
    report.next_kl_weight = next.kl_weight;
    Ok(next)
}

/// The baseline loop. The terrain is always flat.
pub fn run_baseline_gps(cfg: &RunConfig, out: Option<&Path>) -> Result<super::t6gps::RunOutput> {
    cfg.validate()?;
    let mut setup = Setup::new(cfg)?;
    setup.terrain = Terrain::flat();
    if let Some(o) = out {
        std::fs::create_dir_all(o)?;
        cfg.save(&o.join("config.toml"))?;
    }
    let x0 = baseline_start(&setup)?;
    let mut state = TrainingState::new(cfg, &setup);
    let mut reports: Vec<IterationReport> = Vec::new();
    for _ in 0..cfg.iterations {
        let i = state.iteration + 1;
        let dir = out.map(|o| o.join(format!("iter_{i:03}")));
        if let Some(d) = &dir {
            std::fs::create_dir_all(d)?;
        }
        let started = Instant::now();
        let mut report = IterationReport { iteration: i, noise_scale: cfg.noise_scale(i), ..Default::default() };
        let result = baseline_iteration(cfg, &setup, &x0, &state, dir.as_deref(), &mut report);
        report.wall_time_s = started.elapsed().as_secs_f64();
        if let Err(e) = &result {
            report.error = Some(e.to_string());
        }
        if let Some(d) = &dir {
            report.save_json(&d.join("report.json"))?;
        }
        state = result?;
        reports.push(report);
        if let Some(o) = out {
            write_reports_csv(std::fs::File::create(o.join("reports.csv"))?, &reports)?;
        }
        let costs: Vec<f64> = reports.iter().map(|r| r.stats.mean_cost).collect();
        if cfg.plateau_stop && plateaued(&costs, PLATEAU_REL) {
            break;
        }
    }
    if let Some(o) = out {
        PolicyCheckpoint::new(state.policy.clone()).save(&o.join("policy.json"))?;
    }
    if state.policy.is_finite() {
        Ok(super::t6gps::RunOutput { reports, policy: state.policy })
    } else {
        Err(Error::Internal("baseline produced a non-finite policy".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headings_cover_the_circle() {
        assert_eq!(direction_heading(0, 36), 0.0);
        assert!((direction_heading(9, 36) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!((direction_heading(35, 36) - 35.0 * 10f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn world_state_layout() {
        let m = crate::sim::model::RobotModel::default_model();
        let x = settle_neutral(&m, &Terrain::flat(), 0).unwrap();
        let s = world_state(&x);
        assert_eq!(s.len(), 39);
        // Relative positions sum to zero for equal node masses.
        for a in 0..3 {
            let sum: f64 = (0..NUM_NODES).map(|n| s[3 + 3 * n + a]).sum();
            assert!(sum.abs() < 1e-9);
        }
    }

    #[test]
    fn exact_time_varying_fit_when_overdetermined() {
        // x' = 0.5 x + u + 0.1 in 1-D, u = -x + 0.2 exactly.
        let samples: Vec<Vec<ReducedPoint>> = (0..8)
            .map(|i| {
                let x = i as f64 * 0.3 - 1.0;
                let u = -x + 0.2 + 0.01 * (i as f64).sin();
                vec![ReducedPoint { x: vec![x], u: vec![u], x_next: vec![0.5 * x + u + 0.1], dir_next: [1.0, 0.0, 0.0] }]
            })
            .collect();
        let s = fit_time_varying(&samples, 0.0, 1e-12);
        assert!((s.steps[0].a[(0, 0)] - 0.5).abs() < 1e-9);
        assert!((s.steps[0].b[(0, 0)] - 1.0).abs() < 1e-9);
        assert_eq!(s.steps[0].source, ModelSource::TimeStep(0));
    }
}
