//! Time-varying LQ backward pass in deviation coordinates about a recorded
//! trajectory, with Levenberg regularization of the control Hessian.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::symmetrize;

/// Second-order expansion of one stage cost in `(δx, δu)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadCost {
    pub lx: DVector<f64>,
    pub lu: DVector<f64>,
    pub lxx: DMatrix<f64>,
    pub luu: DMatrix<f64>,
    /// `m × n`.
    pub lux: DMatrix<f64>,
}

impl QuadCost {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            lx: DVector::zeros(n),
            lu: DVector::zeros(m),
            lxx: DMatrix::zeros(n, n),
            luu: DMatrix::zeros(m, m),
            lux: DMatrix::zeros(m, n),
        }
    }

    pub fn eval(&self, dx: &DVector<f64>, du: &DVector<f64>) -> f64 {
        self.lx.dot(dx)
            + self.lu.dot(du)
            + 0.5 * dx.dot(&(&self.lxx * dx))
            + 0.5 * du.dot(&(&self.luu * du))
            + du.dot(&(&self.lux * dx))
    }
}

/// Deviation dynamics `δx' = A δx + B δu` plus the stage cost at the same step.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub cost: QuadCost,
}

/// Quadratic cost of the final state deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct Terminal {
    pub vx: DVector<f64>,
    pub vxx: DMatrix<f64>,
}

impl Terminal {
    pub fn zeros(n: usize) -> Self {
        Self { vx: DVector::zeros(n), vxx: DMatrix::zeros(n, n) }
    }

    pub fn eval(&self, dx: &DVector<f64>) -> f64 {
        self.vx.dot(dx) + 0.5 * dx.dot(&(&self.vxx * dx))
    }
}

/// Local linear-Gaussian policy `δu = k + K δx` with covariance `Σ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalPolicy {
    pub k: Vec<DVector<f64>>,
    pub gain: Vec<DMatrix<f64>>,
    pub sigma: Vec<DMatrix<f64>>,
    /// Regularization that succeeded.
    pub reg: f64,
    pub retries: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackwardFailure {
    /// The control Hessian stayed indefinite through every retry.
    RegularizationCap,
    NonFinite,
}

pub const REG_GROWTH: f64 = 10.0;

/// Riccati recursion. `reg` is added to the control Hessian and grows by
/// [`REG_GROWTH`] on each failed Cholesky factorization, at most `max_retries` times.
pub fn lqg_backward_pass(
    stages: &[Stage],
    terminal: &Terminal,
    reg: f64,
    max_retries: usize,
) -> std::result::Result<LocalPolicy, BackwardFailure> {
    let mut mu = reg.max(0.0);
    for retry in 0..=max_retries {
        match sweep(stages, terminal, mu) {
            Some(mut pol) => {
                let finite = pol.k.iter().all(|v| v.iter().all(|x| x.is_finite()))
                    && pol.gain.iter().all(|g| g.iter().all(|x| x.is_finite()));
                if !finite {
                    return Err(BackwardFailure::NonFinite);
                }
                pol.retries = retry;
                return Ok(pol);
            }
            None => mu = if mu > 0.0 { mu * REG_GROWTH } else { 1e-6 },
        }
    }
    Err(BackwardFailure::RegularizationCap)
}

fn sweep(stages: &[Stage], terminal: &Terminal, mu: f64) -> Option<LocalPolicy> {
    let h = stages.len();
    let mut vx = terminal.vx.clone();
    let mut vxx = terminal.vxx.clone();
    let mut k = vec![DVector::zeros(0); h];
    let mut gain = vec![DMatrix::zeros(0, 0); h];
    let mut sigma = vec![DMatrix::zeros(0, 0); h];
    for t in (0..h).rev() {
        let s = &stages[t];
        let c = &s.cost;
        let at = s.a.transpose();
        let bt = s.b.transpose();
        let vxx_a = &vxx * &s.a;
        let vxx_b = &vxx * &s.b;
        let qx = &c.lx + &at * &vx;
        let qu = &c.lu + &bt * &vx;
        let qxx = &c.lxx + &at * &vxx_a;
        let mut quu = &c.luu + &bt * &vxx_b;
        let qux = &c.lux + &bt * &vxx_a;
        symmetrize(&mut quu);
        let mut quu_reg = quu.clone();
        for i in 0..quu_reg.nrows() {
            quu_reg[(i, i)] += mu;
        }
        let ch = quu_reg.cholesky()?;
        let kt = -ch.solve(&qu);
        let gt = -ch.solve(&qux);
        let gtt = gt.transpose();
        vx = &qx + &gtt * (&quu * &kt) + &gtt * &qu + qux.transpose() * &kt;
        vxx = &qxx + &gtt * (&quu * &gt) + &gtt * &qux + qux.transpose() * &gt;
        symmetrize(&mut vxx);
        sigma[t] = ch.inverse();
        k[t] = kt;
        gain[t] = gt;
    }
    Some(LocalPolicy { k, gain, sigma, reg: mu, retries: 0 })
}

/// Cost change predicted by the linear model when the local policy runs in
/// closed loop from `δx₀ = 0`. Controls are clamped to `bounds` about `u_hat`.
/// Zero means no change; negative is an improvement.
pub fn predicted_cost_change(
    stages: &[Stage],
    terminal: &Terminal,
    policy: &LocalPolicy,
    u_hat: &[DVector<f64>],
    bounds: Option<(f64, f64)>,
) -> f64 {
    let n = terminal.vx.len();
    let mut dx = DVector::zeros(n);
    let mut total = 0.0;
    for (t, s) in stages.iter().enumerate() {
        let mut du = &policy.k[t] + &policy.gain[t] * &dx;
        if let Some((lo, hi)) = bounds {
            for i in 0..du.len() {
                du[i] = (u_hat[t][i] + du[i]).clamp(lo, hi) - u_hat[t][i];
            }
        }
        total += s.cost.eval(&dx, &du);
        dx = &s.a * &dx + &s.b * &du;
    }
    total + terminal.eval(&dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Infinite-horizon gain by plain fixed-point iteration of the Riccati map.
    pub(crate) fn dare_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
        let mut p = q.clone();
        for _ in 0..10_000 {
            let bp = b.transpose() * &p;
            let s = r + &bp * b;
            let kk = s.clone().lu().solve(&(&bp * a)).unwrap();
            let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &kk;
            let done = (&next - &p).abs().max() < 1e-14 * (1.0 + p.abs().max());
            p = next;
            if done {
                break;
            }
        }
        let bp = b.transpose() * &p;
        -(r + &bp * b).lu().solve(&(&bp * a)).unwrap()
    }

    pub(crate) fn random_lq(n: usize, m: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = || -> f64 { StandardNormal.sample(&mut rng) };
        let mut a = DMatrix::from_fn(n, n, |_, _| g());
        let rho = a.clone().complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        a *= 0.8 / rho;
        let b = DMatrix::from_fn(n, m, |_, _| g() / (n as f64).sqrt());
        let lq = DMatrix::from_fn(n, n, |_, _| g());
        let q = &lq * lq.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1;
        let lr = DMatrix::from_fn(m, m, |_, _| g());
        let r = &lr * lr.transpose() / m as f64 + DMatrix::identity(m, m) * 0.5;
        (a, b, q, r)
    }

    /// Cost `x'Qx + u'Ru` per stage written as a deviation expansion about zero.
    pub(crate) fn lq_stages(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, h: usize) -> Vec<Stage> {
        let n = a.nrows();
        let m = b.ncols();
        (0..h)
            .map(|_| Stage {
                a: a.clone(),
                b: b.clone(),
                cost: QuadCost { lxx: q * 2.0, luu: r * 2.0, ..QuadCost::zeros(n, m) },
            })
            .collect()
    }

    #[test]
    fn gains_match_riccati_fixed_point() {
        for &(n, m) in &[(2, 1), (5, 3), (39, 24)] {
            for seed in 0..3 {
                let (a, b, q, r) = random_lq(n, m, seed);
                let stages = lq_stages(&a, &b, &q, &r, 50);
                let pol = lqg_backward_pass(&stages, &Terminal::zeros(n), 0.0, 10).unwrap();
                let oracle = dare_gain(&a, &b, &q, &r);
                let err = (&pol.gain[0] - &oracle).abs().max();
                assert!(err < 1e-6, "n={n} m={m} seed={seed}: {err}");
                assert_eq!(pol.retries, 0);
            }
        }
    }

    #[test]
    fn one_step_scalar_minimizer() {
        // x' = x + u with cost u² now and x'² at the end: u* = -x/2.
        let x = 0.8;
        let stage = Stage {
            a: DMatrix::from_element(1, 1, 1.0),
            b: DMatrix::from_element(1, 1, 1.0),
            cost: QuadCost { luu: DMatrix::from_element(1, 1, 2.0), ..QuadCost::zeros(1, 1) },
        };
        // Expansion about the recorded x̂ = x, û = 0, so x̂' = x.
        let term = Terminal { vx: DVector::from_element(1, 2.0 * x), vxx: DMatrix::from_element(1, 1, 2.0) };
        let pol = lqg_backward_pass(&[stage], &term, 0.0, 0).unwrap();
        assert!((pol.k[0][0] + x / 2.0).abs() < 1e-15);
        assert!((pol.gain[0][(0, 0)] + 0.5).abs() < 1e-15);
        assert!((pol.sigma[0][(0, 0)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn zero_cost_means_no_change() {
        let (a, b, _, _) = random_lq(4, 2, 1);
        let stages: Vec<Stage> = (0..6)
            .map(|_| Stage { a: a.clone(), b: b.clone(), cost: QuadCost::zeros(4, 2) })
            .collect();
        let pol = lqg_backward_pass(&stages, &Terminal::zeros(4), 1e-6, 10).unwrap();
        assert!(pol.k.iter().all(|k| k.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn indefinite_hessian_is_regularized_or_capped() {
        let (a, b, _, _) = random_lq(3, 2, 2);
        let mut cost = QuadCost::zeros(3, 2);
        cost.luu = -DMatrix::identity(2, 2) * 1e-3;
        let stages = vec![Stage { a, b, cost }];
        let pol = lqg_backward_pass(&stages, &Terminal::zeros(3), 1e-6, 10).unwrap();
        assert!(pol.retries > 0);
        assert!(pol.reg > 1e-3);
        let mut bad = stages.clone();
        bad[0].cost.luu = -DMatrix::identity(2, 2) * 1e9;
        assert_eq!(lqg_backward_pass(&bad, &Terminal::zeros(3), 1e-6, 10), Err(BackwardFailure::RegularizationCap));
    }
}
