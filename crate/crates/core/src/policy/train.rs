//! Full-batch supervised training with backpropagation and Adam.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dataset::TrainingSet;
use super::network::{sigmoid, silu, Layer, PolicyParams};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 300, learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Loss after each accepted step, starting with the initial loss.
    pub losses: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Standardized inputs, unit-scaled targets and normalized sample weights.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub w: DVector<f64>,
}

impl Batch {
    pub fn new(params: &PolicyParams, data: &TrainingSet) -> Self {
        let (mut x, mut t, mut w) = data.matrices();
        for mut col in x.column_iter_mut() {
            for i in 0..col.len() {
                col[i] = (col[i] - params.input_mean[i]) / params.input_std[i];
            }
        }
        t.apply(|v| *v = params.to_unit(*v));
        let total = w.sum();
        if total > 0.0 {
            w /= total * t.nrows() as f64;
        }
        Self { x, t, w }
    }
}

fn affine(layer: &Layer, a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z = &layer.w * a;
    for mut col in z.column_iter_mut() {
        col += &layer.b;
    }
    z
}

/// Weighted mean squared error in unit output space.
pub fn loss(params: &PolicyParams, batch: &Batch) -> f64 {
    let n = params.layers.len();
    let mut a = batch.x.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let mut z = affine(layer, &a);
        z.apply(|v| *v = if l + 1 < n { silu(*v) } else { sigmoid(*v) });
        a = z;
    }
    weighted_sse(&a, batch)
}

fn weighted_sse(out: &DMatrix<f64>, batch: &Batch) -> f64 {
    out.column_iter()
        .zip(batch.t.column_iter())
        .zip(batch.w.iter())
        .map(|((o, t), w)| w * (o - t).norm_squared())
        .sum()
}

/// Loss and its gradient with respect to every weight and bias.
pub fn loss_and_grad(params: &PolicyParams, batch: &Batch) -> (f64, Vec<Layer>) {
    let n = params.layers.len();
    // Per hidden layer: activation derivative at the pre-activation.
    let mut slopes: Vec<DMatrix<f64>> = Vec::with_capacity(n - 1);
    let mut acts = Vec::with_capacity(n + 1);
    acts.push(batch.x.clone());
    for (l, layer) in params.layers.iter().enumerate() {
        let mut a = affine(layer, acts.last().expect("input"));
        if l + 1 < n {
            let mut slope = a.clone();
            for (x, d) in a.as_mut_slice().iter_mut().zip(slope.as_mut_slice()) {
                let sg = sigmoid(*x);
                *d = sg * (1.0 + *x * (1.0 - sg));
                *x *= sg;
            }
            slopes.push(slope);
        } else {
            a.apply(|v| *v = sigmoid(*v));
        }
        acts.push(a);
    }
    let out = &acts[n];
    let loss = weighted_sse(out, batch);

    let rows = out.nrows();
    let mut dz = out.clone();
    for (j, ((d, o), t)) in dz
        .as_mut_slice()
        .chunks_mut(rows)
        .zip(out.as_slice().chunks(rows))
        .zip(batch.t.as_slice().chunks(rows))
        .enumerate()
    {
        let w = 2.0 * batch.w[j];
        for ((d, &s), &t) in d.iter_mut().zip(o).zip(t) {
            *d = w * (s - t) * s * (1.0 - s);
        }
    }
    let mut grads = Vec::with_capacity(n);
    for l in (0..n).rev() {
        let gw = &dz * acts[l].transpose();
        let mut gb = DVector::zeros(dz.nrows());
        for col in dz.column_iter() {
            gb += col;
        }
        if l > 0 {
            let mut da = params.layers[l].w.transpose() * &dz;
            for (d, s) in da.as_mut_slice().iter_mut().zip(slopes[l - 1].as_slice()) {
                *d *= s;
            }
            dz = da;
        }
        grads.push(Layer { w: gw, b: gb });
    }
    grads.reverse();
    (loss, grads)
}

/// Flat parameter access in layer order, weights (column-major) before biases.
pub fn param_mut(params: &mut PolicyParams, mut idx: usize) -> &mut f64 {
    for layer in &mut params.layers {
        if idx < layer.w.len() {
            return &mut layer.w.as_mut_slice()[idx];
        }
        idx -= layer.w.len();
        if idx < layer.b.len() {
            return &mut layer.b[idx];
        }
        idx -= layer.b.len();
    }
    panic!("parameter index out of range");
}

pub fn grad_at(grads: &[Layer], mut idx: usize) -> f64 {
    for g in grads {
        if idx < g.w.len() {
            return g.w.as_slice()[idx];
        }
        idx -= g.w.len();
        if idx < g.b.len() {
            return g.b[idx];
        }
        idx -= g.b.len();
    }
    panic!("parameter index out of range");
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

/// Compares backprop against central differences at the given parameter indices.
pub fn gradient_check(params: &PolicyParams, batch: &Batch, indices: &[usize], h: f64) -> Vec<GradCheckEntry> {
    let (_, grads) = loss_and_grad(params, batch);
    let mut p = params.clone();
    indices
        .iter()
        .map(|&index| {
            let orig = *param_mut(&mut p, index);
            *param_mut(&mut p, index) = orig + h;
            let up = loss(&p, batch);
            *param_mut(&mut p, index) = orig - h;
            let down = loss(&p, batch);
            *param_mut(&mut p, index) = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grad_at(&grads, index);
            let scale = analytic.abs().max(numeric.abs());
            let relative_error = if scale == 0.0 { 0.0 } else { (analytic - numeric).abs() / scale };
            GradCheckEntry { index, analytic, numeric, relative_error }
        })
        .collect()
}

/// A rejected step (loss increase) is undone and the learning rate scaled by this.
pub const LR_BACKOFF: f64 = 0.5;
/// Growth after an accepted step, capped at the configured rate.
pub const LR_GROWTH: f64 = 1.1;

#[derive(Clone, Debug)]
struct Adam {
    m: Vec<Layer>,
    v: Vec<Layer>,
    t: i32,
}

impl Adam {
    fn step(&mut self, p: &mut PolicyParams, grads: &[Layer], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let update = |x: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *x -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
        };
        for ((layer, g), (ml, vl)) in p.layers.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((x, g), m), v) in layer.w.iter_mut().zip(g.w.iter()).zip(ml.w.iter_mut()).zip(vl.w.iter_mut()) {
                update(x, *g, m, v);
            }
            for (((x, g), m), v) in layer.b.iter_mut().zip(g.b.iter()).zip(ml.b.iter_mut()).zip(vl.b.iter_mut()) {
                update(x, *g, m, v);
            }
        }
    }
}

/// Trains a copy of `params` on `data`, warm-starting from its weights. The
/// input statistics are refreshed from `data` without changing the network
/// function. Steps that raise the loss are rejected, so the recorded losses
/// never increase.
pub fn train(params: &PolicyParams, data: &TrainingSet, cfg: &TrainConfig) -> Result<(PolicyParams, TrainReport)> {
    if data.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if data.input_dim != params.input_dim() {
        return Err(Error::DimensionMismatch { expected: params.input_dim(), got: data.input_dim });
    }
    if data.output_dim != params.output_dim() {
        return Err(Error::DimensionMismatch { expected: params.output_dim(), got: data.output_dim });
    }
    let mut p = params.clone();
    let (mean, std) = data.input_stats();
    p.restandardize(mean, std);
    let batch = Batch::new(&p, data);

    let zeros = |p: &PolicyParams| -> Vec<Layer> {
        p.layers
            .iter()
            .map(|l| Layer { w: DMatrix::zeros(l.w.nrows(), l.w.ncols()), b: DVector::zeros(l.b.len()) })
            .collect()
    };
    let mut adam = Adam { m: zeros(&p), v: zeros(&p), t: 0 };
    let mut lr = cfg.learning_rate;
    let (l0, g0) = loss_and_grad(&p, &batch);
    let mut losses = vec![l0];
    // Last accepted point: parameters, optimizer state, loss and gradient.
    let mut accepted = (p.clone(), adam.clone(), l0, g0);

    for _ in 0..cfg.epochs {
        adam.step(&mut p, &accepted.3, lr, cfg);
        let (l, g) = loss_and_grad(&p, &batch);
        if l.is_finite() && l <= accepted.2 {
            lr = (lr * LR_GROWTH).min(cfg.learning_rate);
            losses.push(l);
            accepted = (p.clone(), adam.clone(), l, g);
        } else {
            lr *= LR_BACKOFF;
            p = accepted.0.clone();
            adam = accepted.1.clone();
        }
    }
    let best = (accepted.2, accepted.0);
    if !best.1.is_finite() {
        return Err(Error::Internal("training produced non-finite parameters".into()));
    }
    let initial_loss = losses[0];
    Ok((best.1, TrainReport { losses, initial_loss, final_loss: best.0 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::model::RobotModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_set(model: &RobotModel, n: usize, seed: u64) -> TrainingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = model.rest_length_bounds;
        let mut d = TrainingSet::default();
        for _ in 0..n {
            let y: Vec<f64> = (0..47).map(|_| rng.random_range(-1.0..1.0)).collect();
            let u: Vec<f64> = (0..24)
                .map(|k| lo + (hi - lo) * (0.5 + 0.3 * (y[k] * y[k + 1]).tanh()))
                .collect();
            d.push(y, u, 0).unwrap();
        }
        d
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let m = RobotModel::default_model();
        let p = PolicyParams::init(&m, 3);
        let d = small_set(&m, 16, 1);
        let batch = Batch::new(&p, &d);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let idx: Vec<usize> = (0..20).map(|_| rng.random_range(0..p.num_params())).collect();
        for e in gradient_check(&p, &batch, &idx, 1e-5) {
            assert!(e.relative_error < 1e-4, "{e:?}");
        }
    }

    #[test]
    fn single_pair_is_memorized() {
        let m = RobotModel::default_model();
        let p = PolicyParams::init(&m, 3);
        let mut d = TrainingSet::default();
        let u: Vec<f64> = (0..24).map(|k| 0.8 + 0.01 * k as f64).collect();
        for _ in 0..4 {
            d.push(vec![0.2; 47], u.clone(), 0).unwrap();
        }
        let (_, rep) = train(&p, &d, &TrainConfig { epochs: 200, ..Default::default() }).unwrap();
        assert!(rep.final_loss < 1e-4, "{}", rep.final_loss);
    }

    #[test]
    fn duplicated_data_gives_same_gradient() {
        let m = RobotModel::default_model();
        let p = PolicyParams::init(&m, 3);
        let d = small_set(&m, 10, 2);
        let mut dd = d.clone();
        dd.pairs.extend(d.pairs.clone());
        let (l1, g1) = loss_and_grad(&p, &Batch::new(&p, &d));
        let (l2, g2) = loss_and_grad(&p, &Batch::new(&p, &dd));
        assert!((l1 - l2).abs() < 1e-14);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((&a.w - &b.w).abs().max() < 1e-14);
            assert!((&a.b - &b.b).abs().max() < 1e-14);
        }
    }

    #[test]
    fn loss_trend_and_empty_set() {
        let m = RobotModel::default_model();
        let p = PolicyParams::init(&m, 6);
        let d = small_set(&m, 64, 3);
        let (q, rep) = train(&p, &d, &TrainConfig { epochs: 60, ..Default::default() }).unwrap();
        assert!(rep.final_loss <= rep.initial_loss);
        for w in rep.losses.windows(2) {
            assert!(w[1] <= w[0] * 1.01, "{} -> {}", w[0], w[1]);
        }
        assert!(q.is_finite());
        assert!(matches!(train(&p, &TrainingSet::default(), &TrainConfig::default()), Err(Error::EmptyTrainingSet)));
    }
}
