//! Small dense least-squares helpers shared by the model fitting and the
//! backward pass.

use nalgebra::{DMatrix, DVector};

/// Affine fit `y ≈ A x + a` from row-per-sample matrices.
#[derive(Clone, Debug)]
pub struct AffineFit {
    /// `q × p`.
    pub a: DMatrix<f64>,
    pub offset: DVector<f64>,
    /// True when the centred design was rank deficient or ridge damping was needed.
    pub low_rank: bool,
}

impl AffineFit {
    pub fn predict(&self, x: &[f64]) -> DVector<f64> {
        &self.a * DVector::from_column_slice(x) + &self.offset
    }

    /// Euclidean residual norm of one sample.
    pub fn residual(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut r = 0.0;
        for i in 0..self.a.nrows() {
            let mut p = self.offset[i];
            for (j, xj) in x.iter().enumerate() {
                p += self.a[(i, j)] * xj;
            }
            r += (y[i] - p).powi(2);
        }
        r.sqrt()
    }
}

/// Least squares on the rows `idx` of `x` (`n × p`) and `y` (`n × q`).
///
/// The data are centred so the offset is never damped. `ridge` is relative
/// to the mean diagonal of the centred Gram matrix; zero requests an exact
/// minimum-norm solution via SVD.
pub fn fit_affine(x: &DMatrix<f64>, y: &DMatrix<f64>, idx: &[usize], ridge: f64) -> AffineFit {
    let p = x.ncols();
    let q = y.ncols();
    let n = idx.len();
    if n == 0 {
        return AffineFit { a: DMatrix::zeros(q, p), offset: DVector::zeros(q), low_rank: true };
    }
    let mut mx = DVector::zeros(p);
    let mut my = DVector::zeros(q);
    for &i in idx {
        mx += x.row(i).transpose();
        my += y.row(i).transpose();
    }
    mx /= n as f64;
    my /= n as f64;
    let xc = DMatrix::from_fn(n, p, |r, c| x[(idx[r], c)] - mx[c]);
    let yc = DMatrix::from_fn(n, q, |r, c| y[(idx[r], c)] - my[c]);

    let (coef, low_rank) = if ridge > 0.0 {
        let mut g = xc.transpose() * &xc;
        let scale = (g.trace() / p.max(1) as f64).max(1e-300);
        for d in 0..p {
            g[(d, d)] += ridge * scale;
        }
        let rhs = xc.transpose() * &yc;
        match g.clone().cholesky() {
            Some(ch) => (ch.solve(&rhs), n <= p),
            None => (svd_solve(&xc, &yc).0, true),
        }
    } else {
        svd_solve(&xc, &yc)
    };
    let a = coef.transpose();
    let offset = &my - &a * &mx;
    AffineFit { a, offset, low_rank }
}

/// Minimum-norm solution of `xc · coef = yc`, plus whether `xc` was rank deficient.
fn svd_solve(xc: &DMatrix<f64>, yc: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let svd = xc.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = smax * 1e-12 * xc.nrows().max(xc.ncols()) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let coef = svd.solve(yc, tol).unwrap_or_else(|_| DMatrix::zeros(xc.ncols(), yc.ncols()));
    (coef, rank < xc.ncols())
}

/// Symmetric positive-definite inverse via Cholesky, if it exists.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.inverse())
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_recovery_without_noise() {
        let n = 30;
        let x = DMatrix::from_fn(n, 3, |i, j| ((i + 1) as f64 * (j as f64 + 1.3)).sin());
        let a = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 0.3, 0.0, 4.0]);
        let b = DVector::from_vec(vec![0.1, -0.7]);
        let y = DMatrix::from_fn(n, 2, |i, r| (a.row(r) * x.row(i).transpose())[0] + b[r]);
        let idx: Vec<usize> = (0..n).collect();
        let fit = fit_affine(&x, &y, &idx, 0.0);
        assert!((&fit.a - &a).abs().max() < 1e-10);
        assert!((&fit.offset - &b).abs().max() < 1e-10);
        assert!(!fit.low_rank);
        assert!(fit.residual(&[0.2, 0.1, -0.3], fit.predict(&[0.2, 0.1, -0.3]).as_slice()) < 1e-14);
    }

    #[test]
    fn underdetermined_is_flagged() {
        let x = DMatrix::from_fn(3, 5, |i, j| (i + j * j) as f64);
        let y = DMatrix::from_fn(3, 1, |i, _| i as f64);
        let fit = fit_affine(&x, &y, &[0, 1, 2], 0.0);
        assert!(fit.low_rank);
        let fit = fit_affine(&x, &y, &[0, 1, 2], 1e-3);
        assert!(fit.low_rank);
    }
}
