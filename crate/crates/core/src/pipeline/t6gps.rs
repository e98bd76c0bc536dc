//! The iterated sample / localize / fit / optimize / train loop.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{derive_seed, RunConfig, TerrainKind};
use super::report::{plateaued, write_reports_csv, IterationReport, TrainingSummary, TrajectoryStats};
use crate::error::{Error, Result};
use crate::localization::{localize, write_census_csv, SurrogateModelSet};
use crate::policy::{gradient_check, train, Batch, PolicyCheckpoint, PolicyParams, TrainingSet};
use crate::rollout::{rollout, write_trajectory_csv, Trajectory, World};
use crate::scenario::initial::{sample_initial_states, InitialStateConfig};
use crate::scenario::terrain::{generate_terrain, Terrain};
use crate::scenario::waypoints::ScenarioState;
use crate::sim::model::{build_robot, RobotModel, NUM_CABLES};
use crate::sim::FullState;
use crate::symmetry::{Symmetry, OBS_DIM};
use crate::trajopt::{run_cstep, write_report_csv, CostSpec};

pub(crate) const TAG_INIT: u64 = 1;
pub(crate) const TAG_SCENARIO: u64 = 2;
pub(crate) const TAG_NOISE: u64 = 3;
pub(crate) const TAG_FIT: u64 = 4;
pub(crate) const TAG_POLICY: u64 = 5;
pub(crate) const TAG_GRADCHECK: u64 = 6;
pub(crate) const TAG_EVAL: u64 = 7;

/// Waypoints stay this far inside the terrain border (m).
pub const WAYPOINT_MARGIN: f64 = 3.0;
const GRADCHECK_SLICES: usize = 5;
const GRADCHECK_STEP: f64 = 1e-5;
const PLATEAU_REL: f64 = 0.02;

/// Robot, symmetry group and terrain shared by every iteration of a run.
pub struct Setup {
    pub model: RobotModel,
    pub sym: Symmetry,
    pub terrain: Terrain,
}

impl Setup {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        Self::with_terrain_seed(cfg, cfg.terrain_seed)
    }

    pub fn with_terrain_seed(cfg: &RunConfig, terrain_seed: u64) -> Result<Self> {
        let model = build_robot(cfg.physics.clone())?;
        let sym = Symmetry::new(&model)?;
        let terrain = match cfg.terrain {
            TerrainKind::Flat => Terrain::flat(),
            TerrainKind::Generated => generate_terrain(terrain_seed, cfg.terrain_targets())?.terrain,
        };
        Ok(Self { model, sym, terrain })
    }

    pub fn world(&self, cfg: &RunConfig) -> World<'_> {
        World { dt: cfg.dt, ..World::new(&self.model, &self.terrain, &self.sym) }
    }

    pub fn cost_spec(&self, cfg: &RunConfig) -> CostSpec {
        CostSpec { v_star: cfg.target_speed, weights: cfg.cost_weights(), bounds: self.model.rest_length_bounds }
    }

    /// Random waypoint chain for a rollout starting at `x0`.
    pub fn scenario(&self, cfg: &RunConfig, x0: &FullState, seed: u64) -> ScenarioState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ex, ey) = self.terrain.extent();
        let (cx, cy) = self.terrain.center();
        let hx = (ex / 2.0 - WAYPOINT_MARGIN).max(0.0);
        let hy = (ey / 2.0 - WAYPOINT_MARGIN).max(0.0);
        let c = x0.com();
        let mut s = ScenarioState::random(
            &mut rng,
            [c.x, c.y],
            cfg.waypoint_radius,
            (cfg.waypoint_spacing_min, cfg.waypoint_spacing_max),
            [cx - hx, cx + hx, cy - hy, cy + hy],
        );
        s.timeout = cfg.waypoint_timeout;
        s.v_star = cfg.target_speed;
        s.weights = cfg.cost_weights();
        s
    }
}

/// Everything carried from one iteration to the next.
#[derive(Clone, Debug)]
pub struct TrainingState {
    pub policy: PolicyParams,
    pub data: TrainingSet,
    pub kl_weight: f64,
    /// Iterations completed so far.
    pub iteration: usize,
}

impl TrainingState {
    pub fn new(cfg: &RunConfig, setup: &Setup) -> Self {
        let mut data = TrainingSet::new(OBS_DIM, NUM_CABLES);
        data.recency_weight = cfg.recency_weight;
        data.window = (cfg.data_window > 0).then_some(cfg.data_window);
        Self {
            policy: PolicyParams::init(&setup.model, derive_seed(cfg.seed, TAG_POLICY, 0)),
            data,
            kl_weight: cfg.kl_weight,
            iteration: 0,
        }
    }
}

/// `N` noisy rollouts of the current policy from fresh random starts and waypoints.
pub fn sample_rollouts(
    cfg: &RunConfig,
    setup: &Setup,
    policy: &PolicyParams,
    iteration: usize,
    noise: f64,
) -> Result<Vec<Trajectory>> {
    let starts = sample_initial_states(
        cfg.samples,
        derive_seed(cfg.seed, TAG_INIT, iteration as u64),
        &setup.terrain,
        &setup.model,
        &InitialStateConfig::default(),
    )?;
    let world = setup.world(cfg);
    starts
        .par_iter()
        .enumerate()
        .map(|(k, x0)| {
            let key = ((iteration as u64) << 32) | k as u64;
            let scn = setup.scenario(cfg, x0, derive_seed(cfg.seed, TAG_SCENARIO, key));
            let mut tr = rollout(&world, policy, x0, cfg.horizon, &scn, noise, derive_seed(cfg.seed, TAG_NOISE, key))?;
            tr.id = k;
            Ok(tr)
        })
        .collect()
}

fn iteration_dir(out: &Path, iteration: usize) -> PathBuf {
    out.join(format!("iter_{iteration:03}"))
}

pub fn write_trajectories(dir: &Path, trajs: &[Trajectory]) -> Result<Vec<PathBuf>> {
    let dir = dir.join("trajectories");
    std::fs::create_dir_all(&dir)?;
    trajs
        .iter()
        .map(|tr| {
            let p = dir.join(format!("rollout_{:04}.csv", tr.id));
            write_trajectory_csv(std::io::BufWriter::new(std::fs::File::create(&p)?), tr)?;
            Ok(p)
        })
        .collect()
}

/// Pre-training gradient check on a few random parameters.
pub fn check_gradients(policy: &PolicyParams, data: &TrainingSet, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = (0..GRADCHECK_SLICES).map(|_| rng.random_range(0..policy.num_params())).collect();
    let batch = Batch::new(policy, data);
    gradient_check(policy, &batch, &idx, GRADCHECK_STEP).iter().map(|e| e.relative_error).fold(0.0, f64::max)
}

/// One iteration. With `out` set, every intermediate artifact is written to
/// `out/iter_NNN/`. On error a partial report is written before returning.
pub fn run_t6gps_iteration(
    cfg: &RunConfig,
    setup: &Setup,
    state: &TrainingState,
    out: Option<&Path>,
) -> Result<(TrainingState, IterationReport)> {
    let i = state.iteration + 1;
    let dir = out.map(|o| iteration_dir(o, i));
    if let Some(d) = &dir {
        std::fs::create_dir_all(d)?;
    }
    let started = Instant::now();
    let mut report = IterationReport { iteration: i, noise_scale: cfg.noise_scale(i), ..Default::default() };
    let result = iteration_body(cfg, setup, state, dir.as_deref(), &mut report);
    report.wall_time_s = started.elapsed().as_secs_f64();
    match result {
        Ok(next) => {
            if let Some(d) = &dir {
                report.save_json(&d.join("report.json"))?;
            }
            Ok((next, report))
        }
        Err(e) => {
            report.error = Some(e.to_string());
            if let Some(d) = &dir {
                report.save_json(&d.join("report.json"))?;
            }
            log::error!("iteration {i} aborted: {e}");
            Err(e)
        }
    }
}

fn iteration_body(
    cfg: &RunConfig,
    setup: &Setup,
    state: &TrainingState,
    dir: Option<&Path>,
    report: &mut IterationReport,
) -> Result<TrainingState> {
    let i = report.iteration;
    let noise = report.noise_scale;

    let trajs = sample_rollouts(cfg, setup, &state.policy, i, noise)?;
    report.stats = TrajectoryStats::from_trajectories(&trajs);
    log::info!(
        "iteration {i}: mean cost {:.4}, forward speed {:.3} m/s",
        report.stats.mean_cost,
        report.stats.mean_forward_speed
    );
    if let (Some(d), true) = (dir, cfg.log_trajectories) {
        write_trajectories(d, &trajs)?;
    }

    let lcfg = cfg.localization(noise);
    let loc = localize(&trajs, &setup.model, &setup.sym, &lcfg)?;
    if loc.segment_steps() + loc.discarded != loc.total_steps {
        return Err(Error::Internal("segmentation lost steps".into()));
    }
    report.segments = loc.segments.len();
    report.discarded_steps = loc.discarded;
    report.classes = loc.classes.len();

    let models = SurrogateModelSet::fit(&loc, &lcfg, derive_seed(cfg.seed, TAG_FIT, i as u64));
    report.census = models.census();
    report.total_modes = report.census.iter().map(|c| c.total_modes).sum();
    if let Some(d) = dir {
        models.save_json(&d.join("models.json"))?;
        write_census_csv(std::fs::File::create(d.join("census.csv"))?, &report.census)?;
    }

    let tcfg = cfg.trajopt(state.kl_weight, noise);
    let cstep = run_cstep(&trajs, &loc, &models, &setup.cost_spec(cfg), &tcfg);
    report.optimizer = cstep.report.clone();
    report.optimizer.iteration = i;
    if let Some(d) = dir {
        write_report_csv(std::fs::File::create(d.join("optimizer.csv"))?, std::slice::from_ref(&report.optimizer))?;
    }

    let mut next = state.clone();
    next.iteration = i;
    for p in cstep.pairs {
        next.data.push(p.y, p.u, i)?;
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
    } else {
        log::warn!("iteration {i}: no improved pairs, policy unchanged");
    }
    if let Some(d) = dir {
        PolicyCheckpoint::new(next.policy.clone()).save(&d.join("policy.json"))?;
    }

    if report.optimizer.skip_fraction() > cfg.kl_skip_threshold {
        next.kl_weight *= 0.5;
        log::info!("iteration {i}: {:.0}% of windows skipped, KL weight -> {}", 100.0 * report.optimizer.skip_fraction(), next.kl_weight);
    }
    report.next_kl_weight = next.kl_weight;
    Ok(next)
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub reports: Vec<IterationReport>,
    pub policy: PolicyParams,
}

/// Writes the config copy, then runs iterations until the count or the plateau rule stops it.
pub fn run_t6gps(cfg: &RunConfig, out: Option<&Path>) -> Result<RunOutput> {
    cfg.validate()?;
    let setup = Setup::new(cfg)?;
    if let Some(o) = out {
        std::fs::create_dir_all(o)?;
        cfg.save(&o.join("config.toml"))?;
    }
    let mut state = TrainingState::new(cfg, &setup);
    let mut reports: Vec<IterationReport> = Vec::new();
    for _ in 0..cfg.iterations {
        let (next, rep) = run_t6gps_iteration(cfg, &setup, &state, out)?;
        state = next;
        reports.push(rep);
        if let Some(o) = out {
            write_reports_csv(std::fs::File::create(o.join("reports.csv"))?, &reports)?;
        }
        let costs: Vec<f64> = reports.iter().map(|r| r.stats.mean_cost).collect();
        if cfg.plateau_stop && plateaued(&costs, PLATEAU_REL) {
            log::info!("mean cost plateaued after {} iterations", reports.len());
            break;
        }
    }
    if let Some(o) = out {
        PolicyCheckpoint::new(state.policy.clone()).save(&o.join("policy.json"))?;
    }
    Ok(RunOutput { reports, policy: state.policy })
}
