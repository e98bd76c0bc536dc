use tensegrity_gps::localization::{localize, Reduction, SurrogateModelSet};
use tensegrity_gps::pipeline::t6gps::sample_rollouts;
use tensegrity_gps::pipeline::{
    evaluate, run_baseline_gps, run_t6gps, IterationReport, RunConfig, RunMode, Setup, TrajectoryStats,
};
use tensegrity_gps::policy::{PolicyCheckpoint, PolicyParams};

fn small(seed: u64) -> RunConfig {
    RunConfig { iterations: 2, samples: 6, horizon: 40, sub_horizon: 10, eval_episodes: 2, eval_horizon: 30, seed, ..RunConfig::default() }
}

fn strip_time(mut r: IterationReport) -> IterationReport {
    r.wall_time_s = 0.0;
    r
}

/// The logs carry nine decimals.
fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

#[test]
fn run_directory_replays_to_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let first = run_t6gps(&small(11), Some(&out)).unwrap();
    for f in ["config.toml", "reports.csv", "policy.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    for i in 1..=2 {
        let d = out.join(format!("iter_{i:03}"));
        for f in ["models.json", "census.csv", "optimizer.csv", "policy.json", "report.json"] {
            assert!(d.join(f).is_file(), "missing iter_{i:03}/{f}");
        }
        let saved = IterationReport::load_json(&d.join("report.json")).unwrap();
        assert_eq!(strip_time(saved), strip_time(first.reports[i - 1].clone()));
    }

    let cfg = RunConfig::load(&out.join("config.toml")).unwrap();
    let again = run_t6gps(&cfg, None).unwrap();
    let a: Vec<_> = first.reports.into_iter().map(strip_time).collect();
    let b: Vec<_> = again.reports.into_iter().map(strip_time).collect();
    assert_eq!(a, b);
    assert_eq!(PolicyCheckpoint::load(&out.join("policy.json")).unwrap(), again.policy);
}

#[test]
fn statistics_recompute_from_logged_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let run = run_t6gps(&RunConfig { iterations: 1, ..small(12) }, Some(&out)).unwrap();
    let traj_dir = out.join("iter_001").join("trajectories");
    let mut files: Vec<_> = std::fs::read_dir(&traj_dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    assert_eq!(files.len(), 6);
    let from_logs = TrajectoryStats::from_csv_files(&files).unwrap();
    let reported = &run.reports[0].stats;
    assert_eq!((from_logs.rollouts, from_logs.steps, from_logs.arrivals), (reported.rollouts, reported.steps, reported.arrivals));
    assert_eq!(from_logs.speed_histogram, reported.speed_histogram);
    assert!(close(from_logs.mean_cost, reported.mean_cost));
    assert!(close(from_logs.mean_forward_speed, reported.mean_forward_speed));
    assert!(close(from_logs.stuck_fraction, reported.stuck_fraction));
}

#[test]
fn segments_partition_every_sampled_step() {
    let cfg = RunConfig { samples: 10, horizon: 80, truncation_cap: 12, ..small(13) };
    let setup = Setup::new(&cfg).unwrap();
    let policy = PolicyParams::init(&setup.model, cfg.seed);
    let trajs = sample_rollouts(&cfg, &setup, &policy, 1, 0.05).unwrap();
    let loc = localize(&trajs, &setup.model, &setup.sym, &cfg.localization(0.05)).unwrap();
    assert_eq!(loc.total_steps, cfg.samples * cfg.horizon);
    let mut covered = vec![vec![0usize; cfg.horizon]; cfg.samples];
    for s in &loc.segments {
        for t in s.segment.start..s.segment.end {
            covered[s.segment.trajectory][t] += 1;
        }
    }
    let in_segments: usize = covered.iter().flatten().filter(|&&c| c == 1).count();
    assert!(covered.iter().flatten().all(|&c| c <= 1), "a step belongs to two segments");
    assert_eq!(in_segments, loc.segment_steps());
    assert_eq!(in_segments + loc.discarded, cfg.samples * cfg.horizon);
    assert!(loc.discarded > 0, "the short cap should truncate some segments");
}

/// Average ranks, ties sharing their mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for k in i..=j {
            r[idx[k]] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Under the full node reduction a cell needs 68 points per mode, more than
/// desk-scale sampling puts in any cell, so every class fits one mode. The CoM
/// velocity reduction needs far fewer points, which makes the trend visible.
#[test]
fn frequent_classes_carry_more_modes() {
    let cfg = RunConfig { samples: 300, horizon: 30, reduction: Reduction::ComVelOnly, seed: 0, ..RunConfig::default() };
    let setup = Setup::new(&cfg).unwrap();
    let policy = PolicyParams::init(&setup.model, cfg.seed);
    let trajs = sample_rollouts(&cfg, &setup, &policy, 1, cfg.noise_scale(1)).unwrap();
    let lcfg = cfg.localization(cfg.noise_scale(1));
    let loc = localize(&trajs, &setup.model, &setup.sym, &lcfg).unwrap();
    let census = SurrogateModelSet::fit(&loc, &lcfg, 0).census();
    assert!(census.len() >= 3, "only {} classes", census.len());
    let freq: Vec<f64> = census.iter().map(|c| c.segments as f64).collect();
    let modes: Vec<f64> = census.iter().map(|c| c.mean_modes).collect();
    let rho = spearman(&freq, &modes);
    assert!(rho > 0.0, "rank correlation {rho}, census {census:?}");
    assert!(census.iter().any(|c| c.max_modes > 1));
}

#[test]
fn spearman_oracle() {
    assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
    assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![1.5, 0.0, 1.5]);
}

#[test]
fn baseline_runs_at_its_budget() {
    let cfg = RunConfig { iterations: 1, baseline_directions: 2, samples: 4, ..RunConfig::desk_baseline() };
    assert_eq!(cfg.mode, RunMode::Baseline);
    let run = run_baseline_gps(&cfg, None).unwrap();
    assert_eq!(run.reports.len(), 1);
    assert_eq!(run.reports[0].stats.steps, cfg.sample_budget());
    assert!(run.reports[0].stats.mean_cost.is_finite());
}

#[test]
fn evaluation_is_deterministic() {
    let cfg = small(14);
    let setup = Setup::new(&cfg).unwrap();
    let policy = PolicyParams::init(&setup.model, 3);
    let a = evaluate(&cfg, &policy, 2, 5, None).unwrap();
    let b = evaluate(&cfg, &policy, 2, 5, None).unwrap();
    assert_eq!(a.episodes, b.episodes);
    assert_eq!(strip_time(a.report), strip_time(b.report));
    assert_eq!(a.episodes.len(), 2);
    assert!(a.episodes.iter().all(|e| e.steps == cfg.eval_horizon));
}
