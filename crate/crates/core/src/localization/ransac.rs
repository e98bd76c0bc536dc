//! Recursive RANSAC: each mode is a robust linear fit to the outliers of the
//! modes before it.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{fit_affine, AffineFit};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Hypothesis sample size is the regressor count plus this.
    pub sample_extra: usize,
    /// Minimum points per mode is the regressor count plus this.
    pub min_fit_extra: usize,
    pub max_modes: usize,
    /// Relative ridge damping of the fallback fits.
    pub ridge: f64,
    /// Lower bound on the per-command policy noise variance.
    pub policy_noise_floor: f64,
    /// Refinement keeps points within this many inlier RMS of the fit.
    pub refine_sigmas: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            sample_extra: 2,
            min_fit_extra: 5,
            max_modes: 6,
            ridge: 1e-2,
            policy_noise_floor: 0.25 * 0.04 * 0.04,
            refine_sigmas: 3.0,
        }
    }
}

impl RansacConfig {
    pub fn min_fit(&self, state_dim: usize, control_dim: usize) -> usize {
        state_dim + control_dim + self.min_fit_extra
    }
}

/// One linear dynamics model `x' = F [x; u] + f` with its paired policy `u = P x + p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    /// `n × (n + m)`.
    pub f_mat: DMatrix<f64>,
    pub f_off: DVector<f64>,
    /// Diagonal of the dynamics noise covariance.
    pub dyn_noise: DVector<f64>,
    /// `m × n`.
    pub p_mat: DMatrix<f64>,
    pub p_off: DVector<f64>,
    /// Diagonal of the policy noise covariance.
    pub pol_noise: DVector<f64>,
    pub inlier_count: usize,
    /// Fit needed ridge damping or had fewer points than regressors.
    pub low_rank: bool,
}

impl Mode {
    pub fn state_dim(&self) -> usize {
        self.f_mat.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.f_mat.ncols() - self.f_mat.nrows()
    }

    /// Dynamics residual norm of one transition.
    pub fn residual(&self, x: &[f64], u: &[f64], x_next: &[f64]) -> f64 {
        let mut r = 0.0;
        for i in 0..self.f_mat.nrows() {
            let mut p = self.f_off[i];
            for (j, v) in x.iter().chain(u).enumerate() {
                p += self.f_mat[(i, j)] * v;
            }
            r += (x_next[i] - p).powi(2);
        }
        r.sqrt()
    }
}

/// Transitions gathered at one (class, warped step) cell.
#[derive(Clone, Debug, Default)]
pub struct PointSet {
    /// `N × (n + m)` rows of `[x; u]`.
    pub xu: DMatrix<f64>,
    /// `N × n`.
    pub x_next: DMatrix<f64>,
    pub state_dim: usize,
}

impl PointSet {
    pub fn new(rows: &[(&[f64], &[f64], &[f64])]) -> Self {
        let n = rows.first().map_or(0, |r| r.0.len());
        let m = rows.first().map_or(0, |r| r.1.len());
        let xu = DMatrix::from_fn(rows.len(), n + m, |i, j| if j < n { rows[i].0[j] } else { rows[i].1[j - n] });
        let x_next = DMatrix::from_fn(rows.len(), n, |i, j| rows[i].2[j]);
        Self { xu, x_next, state_dim: n }
    }

    pub fn len(&self) -> usize {
        self.xu.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn control_dim(&self) -> usize {
        self.xu.ncols() - self.state_dim
    }

    fn residuals(&self, fit: &AffineFit, idx: &[usize]) -> Vec<f64> {
        let pred = &self.xu * fit.a.transpose();
        idx.iter()
            .map(|&i| {
                (0..self.state_dim)
                    .map(|j| (self.x_next[(i, j)] - pred[(i, j)] - fit.offset[j]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|r| r * r).sum::<f64>() / v.len() as f64).sqrt()
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    let k = s.len() / 2;
    if s.len() % 2 == 1 {
        s[k]
    } else {
        0.5 * (s[k - 1] + s[k])
    }
}

/// Fits up to `max_modes` linear modes; mode `h` uses only the outliers of mode `h - 1`.
pub fn fit_multimodal(points: &PointSet, min_fit: usize, cfg: &RansacConfig, seed: u64) -> Vec<Mode> {
    let n = points.state_dim;
    let n_reg = points.xu.ncols();
    let all: Vec<usize> = (0..points.len()).collect();
    if all.is_empty() {
        return Vec::new();
    }
    if all.len() < min_fit.max(1) {
        let fit = fit_affine(&points.xu, &points.x_next, &all, cfg.ridge);
        return vec![make_mode(points, &all, fit, true, cfg)];
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample_size = (n_reg + cfg.sample_extra).max(1);
    let mut remaining = all;
    let mut modes = Vec::new();

    while modes.len() < cfg.max_modes.max(1) && remaining.len() >= min_fit.max(1) {
        let prelim = fit_affine(&points.xu, &points.x_next, &remaining, 0.0);
        let pr = points.residuals(&prelim, &remaining);
        let target_rms = rms(&points.residuals(&zero_fit(n, n_reg), &remaining));
        let floor = 1e-9 * (1.0 + target_rms);
        let tau = rms(&pr).max(floor);

        // Consensus search over random minimal-plus samples, scored by the
        // truncated squared residual. Each hypothesis that beats the best raw
        // score so far is refined locally before it competes.
        let msac = |fit: &AffineFit| points.residuals(fit, &remaining).iter().map(|r| r.min(tau).powi(2)).sum::<f64>();
        let mut best: Option<(f64, Vec<usize>, AffineFit)> = None;
        if remaining.len() > sample_size {
            let mut best_raw = f64::INFINITY;
            for _ in 0..cfg.iterations {
                let pick: Vec<usize> =
                    sample(&mut rng, remaining.len(), sample_size).into_iter().map(|k| remaining[k]).collect();
                let hyp = fit_affine(&points.xu, &points.x_next, &pick, 1e-10);
                let r = points.residuals(&hyp, &remaining);
                let raw: f64 = r.iter().map(|ri| ri.min(tau).powi(2)).sum();
                if raw >= best_raw {
                    continue;
                }
                best_raw = raw;
                let inl: Vec<usize> =
                    remaining.iter().zip(&r).filter(|(_, &ri)| ri < tau).map(|(&i, _)| i).collect();
                if inl.len() < min_fit {
                    continue;
                }
                let (inl, fit) = refine(points, &remaining, inl, hyp, min_fit, floor, cfg);
                let score = msac(&fit);
                if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
                    best = Some((score, inl, fit));
                }
            }
        }
        let (inliers, fit) = match best {
            Some((_, inl, fit)) => (inl, fit),
            None => refine(points, &remaining, remaining.clone(), prelim, min_fit, floor, cfg),
        };
        let low_rank = fit.low_rank;
        modes.push(make_mode(points, &inliers, fit, low_rank, cfg));
        remaining.retain(|i| inliers.binary_search(i).is_err());
    }
    modes
}

/// Keeps points within a few robust scales of the fit, refits, and repeats.
/// The median keeps points of other modes in the starting set from inflating
/// the scale.
fn refine(
    points: &PointSet,
    remaining: &[usize],
    mut inliers: Vec<usize>,
    mut fit: AffineFit,
    min_fit: usize,
    floor: f64,
    cfg: &RansacConfig,
) -> (Vec<usize>, AffineFit) {
    let mut refit = false;
    for _ in 0..20 {
        let thr = (cfg.refine_sigmas * median(&points.residuals(&fit, &inliers))).max(floor);
        let r = points.residuals(&fit, remaining);
        let next: Vec<usize> = remaining.iter().zip(&r).filter(|(_, &ri)| ri <= thr).map(|(&i, _)| i).collect();
        if next.len() < min_fit || (refit && next == inliers) {
            break;
        }
        inliers = next;
        fit = fit_affine(&points.xu, &points.x_next, &inliers, 0.0);
        refit = true;
    }
    (inliers, fit)
}

fn zero_fit(n: usize, n_reg: usize) -> AffineFit {
    AffineFit { a: DMatrix::zeros(n, n_reg), offset: DVector::zeros(n), low_rank: false }
}

fn make_mode(points: &PointSet, inliers: &[usize], fit: AffineFit, low_rank: bool, cfg: &RansacConfig) -> Mode {
    let n = points.state_dim;
    let m = points.control_dim();
    let k = inliers.len().max(1) as f64;

    let mut dyn_noise: DVector<f64> = DVector::zeros(n);
    let pred = &points.xu * fit.a.transpose();
    for &i in inliers {
        for j in 0..n {
            dyn_noise[j] += (points.x_next[(i, j)] - pred[(i, j)] - fit.offset[j]).powi(2) / k;
        }
    }
    dyn_noise.apply(|v| *v = v.max(1e-12));

    // Policy surrogate on the same inliers.
    let xs = points.xu.columns(0, n).into_owned();
    let us = points.xu.columns(n, m).into_owned();
    let pol_ridge = if inliers.len() < n + 1 + cfg.min_fit_extra { cfg.ridge } else { 0.0 };
    let pol = fit_affine(&xs, &us, inliers, pol_ridge);
    let mut pol_noise: DVector<f64> = DVector::zeros(m);
    let upred = &xs * pol.a.transpose();
    for &i in inliers {
        for j in 0..m {
            pol_noise[j] += (us[(i, j)] - upred[(i, j)] - pol.offset[j]).powi(2) / k;
        }
    }
    pol_noise.apply(|v| *v = v.max(cfg.policy_noise_floor).max(1e-12));

    Mode {
        f_mat: fit.a,
        f_off: fit.offset,
        dyn_noise,
        p_mat: pol.a,
        p_off: pol.offset,
        pol_noise,
        inlier_count: inliers.len(),
        low_rank: low_rank || pol.low_rank,
    }
}

/// Mode with the smallest dynamics residual; ties go to the lower index.
pub fn assign_mode(x: &[f64], u: &[f64], x_next: &[f64], modes: &[Mode]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (h, m) in modes.iter().enumerate() {
        let r = m.residual(x, u, x_next);
        if r < best.1 {
            best = (h, r);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    struct Synthetic {
        points: PointSet,
        maps: [(DMatrix<f64>, DVector<f64>); 2],
        labels: Vec<usize>,
    }

    /// Equal mixture of two random linear maps with noise at `noise` of the signal RMS.
    fn two_mode(seed: u64, count: usize, noise: f64) -> Synthetic {
        let (n, m) = (4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = || -> f64 { StandardNormal.sample(&mut rng) };
        let maps = [0, 1].map(|_| (DMatrix::from_fn(n, n + m, |_, _| g()), DVector::from_fn(n, |_, _| g())));
        let xu = DMatrix::from_fn(count, n + m, |_, _| g());
        let labels: Vec<usize> = (0..count).map(|i| i % 2).collect();
        let mut x_next = DMatrix::zeros(count, n);
        for i in 0..count {
            let (a, b) = &maps[labels[i]];
            let y = a * xu.row(i).transpose() + b;
            x_next.row_mut(i).copy_from(&y.transpose());
        }
        let signal = (x_next.norm_squared() / (count * n) as f64).sqrt();
        for v in x_next.iter_mut() {
            *v += noise * signal * g();
        }
        Synthetic { points: PointSet { xu, x_next, state_dim: n }, maps, labels }
    }

    fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn noiseless_single_map_is_exact() {
        let s = two_mode(1, 200, 0.0);
        let one: Vec<usize> = (0..200).filter(|i| s.labels[*i] == 0).collect();
        let pts = PointSet {
            xu: s.points.xu.select_rows(&one),
            x_next: s.points.x_next.select_rows(&one),
            state_dim: 4,
        };
        let modes = fit_multimodal(&pts, 11, &RansacConfig::default(), 0);
        assert_eq!(modes.len(), 1);
        assert!((&modes[0].f_mat - &s.maps[0].0).abs().max() < 1e-8);
        assert!((&modes[0].f_off - &s.maps[0].1).abs().max() < 1e-8);
        assert_eq!(modes[0].inlier_count, 100);
    }

    #[test]
    fn few_points_fall_back_to_one_flagged_ridge_mode() {
        let s = two_mode(2, 3, 0.01);
        let modes = fit_multimodal(&s.points, 10, &RansacConfig::default(), 0);
        assert_eq!(modes.len(), 1);
        assert!(modes[0].low_rank);
        assert_eq!(modes[0].inlier_count, 3);
    }

    #[test]
    fn two_modes_recovered_and_assigned() {
        let s = two_mode(3, 1000, 0.01);
        let modes = fit_multimodal(&s.points, 11, &RansacConfig::default(), 7);
        assert!(modes.len() >= 2);
        for (a, _) in &s.maps {
            let best = modes[..2].iter().map(|m| rel_err(&m.f_mat, a)).fold(f64::INFINITY, f64::min);
            assert!(best < 0.05, "coefficient error {best}");
        }
        // Inliers of the second mode are assigned to it.
        let second = if rel_err(&modes[1].f_mat, &s.maps[1].0) < 0.05 { 1 } else { 0 };
        let row = |m: &DMatrix<f64>, i: usize| m.row(i).iter().copied().collect::<Vec<f64>>();
        let mut hits = 0;
        let mut total = 0;
        for i in (0..1000).filter(|i| s.labels[*i] == 1) {
            let xu = row(&s.points.xu, i);
            let k = assign_mode(&xu[..4], &xu[4..], &row(&s.points.x_next, i), &modes[..2]);
            total += 1;
            hits += (k == second) as usize;
        }
        assert!(hits as f64 / total as f64 > 0.95);
    }

    #[test]
    fn deterministic_and_disjoint() {
        let s = two_mode(4, 400, 0.02);
        let a = fit_multimodal(&s.points, 11, &RansacConfig::default(), 9);
        let b = fit_multimodal(&s.points, 11, &RansacConfig::default(), 9);
        assert_eq!(a, b);
        assert!(a.iter().map(|m| m.inlier_count).sum::<usize>() <= 400);
    }

    #[test]
    fn assignment_ties_go_to_lower_index() {
        let s = two_mode(5, 50, 0.01);
        let modes = fit_multimodal(&s.points, 1000, &RansacConfig::default(), 0);
        assert_eq!(assign_mode(&[0.0; 4], &[0.0; 2], &[0.0; 4], &modes), 0);
        let twice = vec![modes[0].clone(), modes[0].clone()];
        assert_eq!(assign_mode(&[0.1; 4], &[0.2; 2], &[0.3; 4], &twice), 0);
    }
}
