//! Control improvement on short sub-trajectories against the patched
//! surrogate models.

pub mod lqr;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::fit_affine;
use crate::localization::{assign_mode, Localization, ReducedPoint, StepBinding, SurrogateModelSet};
use crate::rollout::Trajectory;
use crate::scenario::waypoints::CostWeights;

pub use lqr::{lqg_backward_pass, predicted_cost_change, BackwardFailure, LocalPolicy, QuadCost, Stage, Terminal};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajoptConfig {
    /// Nominal sub-trajectory length.
    pub horizon: usize,
    /// Weight of the KL term.
    pub kl_weight: f64,
    pub reg_init: f64,
    pub max_retries: usize,
    /// Relative ridge damping of the per-window fallback fit.
    pub fallback_ridge: f64,
    /// Floor on the fallback policy noise variance.
    pub policy_noise_floor: f64,
}

impl Default for TrajoptConfig {
    fn default() -> Self {
        Self {
            horizon: 15,
            kl_weight: 1.0,
            reg_init: 1e-6,
            max_retries: 10,
            fallback_ridge: 1e-2,
            policy_noise_floor: 0.25 * 0.04 * 0.04,
        }
    }
}

/// `[start, end)` windows over `len` steps. Window ends snap to the segment
/// boundary nearest the nominal end when one lies within half a horizon of
/// it; a final remainder shorter than half a horizon joins the previous window.
pub fn split_windows(len: usize, boundaries: &[usize], horizon: usize) -> Vec<(usize, usize)> {
    let h = horizon.max(2);
    let mut out: Vec<(usize, usize)> = Vec::new();
    let mut p = 0;
    while p < len {
        let rest = len - p;
        if rest <= h {
            match out.last_mut() {
                Some(last) if 2 * rest < h => last.1 = len,
                _ => out.push((p, len)),
            }
            break;
        }
        let nominal = p + h;
        let lo = p + h.div_ceil(2);
        let hi = (nominal + h / 2).min(len - 1);
        let end = boundaries
            .iter()
            .copied()
            .filter(|&b| b >= lo && b <= hi)
            .min_by_key(|&b| (b.abs_diff(nominal), b))
            .unwrap_or(nominal);
        out.push((p, end));
        p = end;
    }
    out
}

/// Windows over a trajectory, aligned to its bottom-face changes.
pub fn split_subtrajectories(traj: &Trajectory, horizon: usize) -> Vec<(usize, usize)> {
    let boundaries: Vec<usize> =
        (1..traj.len()).filter(|&t| traj.steps[t].bottom_face != traj.steps[t - 1].bottom_face).collect();
    split_windows(traj.len(), &boundaries, horizon)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubTrajectory {
    /// Index into the iteration's trajectory list.
    pub trajectory: usize,
    pub start: usize,
    pub end: usize,
    pub bindings: Vec<StepBinding>,
}

impl SubTrajectory {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn points<'a>(&self, loc: &'a Localization) -> &'a [ReducedPoint] {
        &loc.points[self.trajectory][self.start..self.end]
    }
}

pub fn subtrajectories(trajs: &[Trajectory], loc: &Localization, horizon: usize) -> Vec<SubTrajectory> {
    trajs
        .iter()
        .enumerate()
        .flat_map(|(ti, tr)| {
            split_subtrajectories(tr, horizon).into_iter().map(move |(a, b)| SubTrajectory {
                trajectory: ti,
                start: a,
                end: b,
                bindings: loc.bindings[ti][a..b].to_vec(),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelSource {
    Cell { class: usize, cell: usize, mode: usize },
    /// The step's own cell was empty; the nearest fitted cell of its class was used.
    Nearest { class: usize, cell: usize, mode: usize },
    /// The class had no fitted cell; a fit over the window itself was used.
    WindowFit,
    /// Per-time-step fit of a fixed-condition run.
    TimeStep(usize),
}

impl ModelSource {
    pub fn is_fallback(&self) -> bool {
        !matches!(self, Self::Cell { .. } | Self::TimeStep(_))
    }
}

/// Linear dynamics and prior policy for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchedModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub p_mat: DMatrix<f64>,
    pub p_off: DVector<f64>,
    pub pol_noise: DVector<f64>,
    pub source: ModelSource,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSeries {
    pub steps: Vec<PatchedModel>,
    pub fallbacks: usize,
}

/// Per-step models for a window, with the fallbacks described on [`ModelSource`].
pub fn patch_model_series(
    sub: &SubTrajectory,
    loc: &Localization,
    models: &SurrogateModelSet,
    cfg: &TrajoptConfig,
) -> ModelSeries {
    let n = models.state_dim;
    let pts = sub.points(loc);
    let mut window_fit: Option<PatchedModel> = None;
    let mut steps = Vec::with_capacity(sub.len());
    let mut fallbacks = 0;
    for (j, b) in sub.bindings.iter().enumerate() {
        let p = &pts[j];
        let cm = &models.classes[b.class];
        let cell = if cm.cells.get(b.cell).is_some_and(|c| !c.modes.is_empty()) {
            Some((b.cell, false))
        } else {
            cm.nearest_fitted(b.cell).map(|c| (c, true))
        };
        let pm = match cell {
            Some((cell, nearest)) => {
                let modes = &cm.cells[cell].modes;
                let h = assign_mode(&p.x, &p.u, &p.x_next, modes);
                let md = &modes[h];
                let source = if nearest {
                    ModelSource::Nearest { class: b.class, cell, mode: h }
                } else {
                    ModelSource::Cell { class: b.class, cell, mode: h }
                };
                PatchedModel {
                    a: md.f_mat.columns(0, n).into_owned(),
                    b: md.f_mat.columns(n, md.control_dim()).into_owned(),
                    p_mat: md.p_mat.clone(),
                    p_off: md.p_off.clone(),
                    pol_noise: md.pol_noise.clone(),
                    source,
                }
            }
            None => window_fit.get_or_insert_with(|| fit_window(pts, cfg)).clone(),
        };
        fallbacks += pm.source.is_fallback() as usize;
        steps.push(pm);
    }
    ModelSeries { steps, fallbacks }
}

fn fit_window(pts: &[ReducedPoint], cfg: &TrajoptConfig) -> PatchedModel {
    let n = pts[0].x.len();
    let m = pts[0].u.len();
    let xu = DMatrix::from_fn(pts.len(), n + m, |i, j| if j < n { pts[i].x[j] } else { pts[i].u[j - n] });
    let xn = DMatrix::from_fn(pts.len(), n, |i, j| pts[i].x_next[j]);
    let idx: Vec<usize> = (0..pts.len()).collect();
    let dynf = fit_affine(&xu, &xn, &idx, cfg.fallback_ridge);
    let xs = xu.columns(0, n).into_owned();
    let us = xu.columns(n, m).into_owned();
    let pol = fit_affine(&xs, &us, &idx, cfg.fallback_ridge);
    let mut noise: DVector<f64> = DVector::zeros(m);
    for (i, p) in pts.iter().enumerate() {
        let pred = pol.predict(&p.x);
        for c in 0..m {
            noise[c] += (us[(i, c)] - pred[c]).powi(2) / pts.len() as f64;
        }
    }
    noise.apply(|v| *v = v.max(cfg.policy_noise_floor).max(1e-12));
    PatchedModel {
        a: dynf.a.columns(0, n).into_owned(),
        b: dynf.a.columns(n, m).into_owned(),
        p_mat: pol.a,
        p_off: pol.offset,
        pol_noise: noise,
        source: ModelSource::WindowFit,
    }
}

/// Gradient and Hessian of the running cost of a reduced state whose first
/// three entries are the CoM velocity.
pub fn state_cost_expansion(x: &[f64], dir: [f64; 3], v_star: f64, w: &CostWeights) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.len();
    let mut g = DVector::zeros(n);
    let mut h = DMatrix::zeros(n, n);
    for i in 0..3 {
        g[i] = 2.0 * w.0[i] * (x[i] - v_star * dir[i]);
        h[(i, i)] = 2.0 * w.0[i];
    }
    (g, h)
}

/// Stage expansion: the running cost of `x` (when `dir` is given) plus
/// `c/2 (u - P x - p)ᵀ Σ⁻¹ (u - P x - p)` against the prior policy.
pub fn quadratize_cost(
    x: &[f64],
    u: &[f64],
    dir: Option<[f64; 3]>,
    v_star: f64,
    w: &CostWeights,
    prior: &PatchedModel,
    c: f64,
) -> QuadCost {
    let n = x.len();
    let m = u.len();
    let mut q = QuadCost::zeros(n, m);
    if let Some(d) = dir {
        let (g, h) = state_cost_expansion(x, d, v_star, w);
        q.lx = g;
        q.lxx = h;
    }
    if c > 0.0 {
        let sinv = DVector::from_fn(m, |i, _| c / prior.pol_noise[i]);
        let r = DVector::from_column_slice(u) - &prior.p_mat * DVector::from_column_slice(x) - &prior.p_off;
        let sr = r.component_mul(&sinv);
        let sp = DMatrix::from_fn(m, n, |i, j| sinv[i] * prior.p_mat[(i, j)]);
        q.lu += &sr;
        q.lx -= prior.p_mat.transpose() * &sr;
        q.luu += DMatrix::from_diagonal(&sinv);
        q.lxx += prior.p_mat.transpose() * &sp;
        q.lux -= sp;
    }
    q
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkipReason {
    Backward(BackwardFailure),
    /// The clamped closed-loop policy did not lower the predicted cost.
    NoImprovement,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Improvement {
    pub sub: SubTrajectory,
    pub policy: LocalPolicy,
    /// Improved canonical commands, one per step, within the actuator bounds.
    pub u_star: Vec<Vec<f64>>,
    /// Negative predicted cost change on the surrogate.
    pub predicted_improvement: f64,
    pub fallbacks: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostSpec {
    pub v_star: f64,
    pub weights: CostWeights,
    pub bounds: (f64, f64),
}

/// Stages and terminal cost of a window against a patched series.
pub fn build_problem(
    pts: &[ReducedPoint],
    series: &ModelSeries,
    cost: &CostSpec,
    kl_weight: f64,
) -> (Vec<Stage>, Terminal) {
    let h = pts.len();
    let stages = (0..h)
        .map(|j| {
            let pm = &series.steps[j];
            let dir = (j > 0).then(|| pts[j - 1].dir_next);
            Stage {
                a: pm.a.clone(),
                b: pm.b.clone(),
                cost: quadratize_cost(&pts[j].x, &pts[j].u, dir, cost.v_star, &cost.weights, pm, kl_weight),
            }
        })
        .collect();
    let (vx, vxx) = state_cost_expansion(&pts[h - 1].x_next, pts[h - 1].dir_next, cost.v_star, &cost.weights);
    (stages, Terminal { vx, vxx })
}

/// Backward pass on one window; improved commands are `clamp(û + k)` at the recorded states.
pub fn improve_subtrajectory(
    sub: &SubTrajectory,
    loc: &Localization,
    models: &SurrogateModelSet,
    cost: &CostSpec,
    cfg: &TrajoptConfig,
) -> std::result::Result<Improvement, (SkipReason, usize)> {
    let pts = sub.points(loc);
    let series = patch_model_series(sub, loc, models, cfg);
    let (stages, terminal) = build_problem(pts, &series, cost, cfg.kl_weight);
    let policy = lqg_backward_pass(&stages, &terminal, cfg.reg_init, cfg.max_retries)
        .map_err(|e| (SkipReason::Backward(e), series.fallbacks))?;
    let u_hat: Vec<DVector<f64>> = pts.iter().map(|p| DVector::from_column_slice(&p.u)).collect();
    let change = predicted_cost_change(&stages, &terminal, &policy, &u_hat, Some(cost.bounds));
    if !(change <= 0.0) {
        return Err((SkipReason::NoImprovement, series.fallbacks));
    }
    let (lo, hi) = cost.bounds;
    let u_star = u_hat
        .iter()
        .zip(&policy.k)
        .map(|(u, k)| u.iter().zip(k.iter()).map(|(a, b)| (a + b).clamp(lo, hi)).collect())
        .collect();
    Ok(Improvement {
        sub: sub.clone(),
        policy,
        u_star,
        predicted_improvement: -change,
        fallbacks: series.fallbacks,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub iteration: usize,
    pub kl_weight: f64,
    pub subtrajectories: usize,
    pub skipped: usize,
    pub skipped_regularization: usize,
    pub skipped_no_improvement: usize,
    pub fallback_models: usize,
    pub mean_predicted_improvement: f64,
    pub mean_action_change: f64,
    pub pairs: usize,
}

impl OptimizerReport {
    pub fn skip_fraction(&self) -> f64 {
        if self.subtrajectories == 0 {
            0.0
        } else {
            self.skipped as f64 / self.subtrajectories as f64
        }
    }
}

pub fn write_report_csv<W: Write>(w: W, rows: &[OptimizerReport]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    wr.flush()?;
    Ok(())
}

/// Observation / improved-command pair with its source step.
#[derive(Clone, Debug, PartialEq)]
pub struct ImprovedPair {
    pub trajectory: usize,
    pub step: usize,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
}

/// One pair per step of an improved window.
pub fn collect_training_pairs(imp: &Improvement, trajs: &[Trajectory]) -> Vec<ImprovedPair> {
    let tr = &trajs[imp.sub.trajectory];
    (imp.sub.start..imp.sub.end)
        .zip(&imp.u_star)
        .map(|(t, u)| ImprovedPair { trajectory: imp.sub.trajectory, step: t, y: tr.steps[t].observation.clone(), u: u.clone() })
        .collect()
}

#[derive(Clone, Debug)]
pub struct CStepOutput {
    pub improvements: Vec<Improvement>,
    pub pairs: Vec<ImprovedPair>,
    pub report: OptimizerReport,
}

/// Splits, patches and improves every window; windows run in parallel.
pub fn run_cstep(
    trajs: &[Trajectory],
    loc: &Localization,
    models: &SurrogateModelSet,
    cost: &CostSpec,
    cfg: &TrajoptConfig,
) -> CStepOutput {
    let subs = subtrajectories(trajs, loc, cfg.horizon);
    let results: Vec<_> = subs.par_iter().map(|s| improve_subtrajectory(s, loc, models, cost, cfg)).collect();
    let mut report = OptimizerReport { kl_weight: cfg.kl_weight, subtrajectories: subs.len(), ..Default::default() };
    let mut improvements = Vec::new();
    let mut change_sum = 0.0;
    let mut change_count = 0usize;
    for r in results {
        match r {
            Ok(imp) => {
                report.fallback_models += imp.fallbacks;
                for (j, u) in imp.u_star.iter().enumerate() {
                    let p = &loc.points[imp.sub.trajectory][imp.sub.start + j];
                    change_sum += u.iter().zip(&p.u).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    change_count += 1;
                }
                improvements.push(imp);
            }
            Err((reason, fallbacks)) => {
                report.fallback_models += fallbacks;
                report.skipped += 1;
                match reason {
                    SkipReason::Backward(_) => report.skipped_regularization += 1,
                    SkipReason::NoImprovement => report.skipped_no_improvement += 1,
                }
            }
        }
    }
    if !improvements.is_empty() {
        report.mean_predicted_improvement =
            improvements.iter().map(|i| i.predicted_improvement).sum::<f64>() / improvements.len() as f64;
    }
    if change_count > 0 {
        report.mean_action_change = change_sum / change_count as f64;
    }
    let pairs: Vec<ImprovedPair> = improvements.iter().flat_map(|i| collect_training_pairs(i, trajs)).collect();
    report.pairs = pairs.len();
    CStepOutput { improvements, pairs, report }
}
