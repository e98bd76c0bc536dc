//! Fully connected policy network with SiLU hidden units and a sigmoid output
//! scaled to the rest-length bounds.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::model::{RobotModel, NUM_CABLES};
use crate::symmetry::OBS_DIM;

pub const HIDDEN: [usize; 3] = [256, 256, 256];

/// Standard deviations below this are replaced by 1 when standardizing.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub layers: Vec<Layer>,
    pub input_mean: DVector<f64>,
    pub input_std: DVector<f64>,
    pub output_lo: f64,
    pub output_hi: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

pub fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Scale of the output-layer weights relative to `1/sqrt(fan_in)`.
const OUTPUT_INIT_GAIN: f64 = 0.1;

impl PolicyParams {
    /// Random network whose outputs start near the neutral rest length.
    pub fn init(model: &RobotModel, seed: u64) -> Self {
        Self::init_sized(model, seed, OBS_DIM, &HIDDEN, NUM_CABLES)
    }

    pub fn init_sized(model: &RobotModel, seed: u64, inputs: usize, hidden: &[usize], outputs: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(outputs);
        let (lo, hi) = model.rest_length_bounds;
        let neutral_logit = logit((model.neutral_rest_length - lo) / (hi - lo));
        let n_layers = sizes.len() - 1;
        let layers = (0..n_layers)
            .map(|l| {
                let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
                let last = l + 1 == n_layers;
                let std = if last { OUTPUT_INIT_GAIN } else { 2f64.sqrt() } / (fan_in as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                let w = DMatrix::from_fn(fan_out, fan_in, |_, _| normal.sample(&mut rng));
                let b = if last { DVector::from_element(fan_out, neutral_logit) } else { DVector::zeros(fan_out) };
                Layer { w, b }
            })
            .collect();
        Self {
            layers,
            input_mean: DVector::zeros(inputs),
            input_std: DVector::from_element(inputs, 1.0),
            output_lo: lo,
            output_hi: hi,
        }
    }

    /// All-zero weights: outputs `value` for every input.
    pub fn constant(model: &RobotModel, value: f64) -> Self {
        let mut p = Self::init(model, 0);
        let (lo, hi) = (p.output_lo, p.output_hi);
        let z = logit(((value - lo) / (hi - lo)).clamp(1e-9, 1.0 - 1e-9));
        let n = p.layers.len();
        for (l, layer) in p.layers.iter_mut().enumerate() {
            layer.w.fill(0.0);
            layer.b.fill(if l + 1 == n { z } else { 0.0 });
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.nrows())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|x| x.is_finite()))
            && self.input_mean.iter().chain(self.input_std.iter()).all(|x| x.is_finite())
    }

    pub fn standardize(&self, y: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            y.len(),
            y.iter().enumerate().map(|(i, v)| (v - self.input_mean[i]) / self.input_std[i]),
        )
    }

    /// Output in normalized `[0, 1]` units.
    pub fn forward_unit(&self, y: &[f64]) -> Result<DVector<f64>> {
        if y.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: y.len() });
        }
        let mut a = self.standardize(y);
        let n = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.w * &a + &layer.b;
            if l + 1 < n {
                z.apply(|v| *v = silu(*v));
            } else {
                z.apply(|v| *v = sigmoid(*v));
            }
            a = z;
        }
        Ok(a)
    }

    /// Rest-length command (canonical cable order).
    pub fn forward(&self, y: &[f64]) -> Result<Vec<f64>> {
        let s = self.forward_unit(y)?;
        Ok(s.iter().map(|v| self.output_lo + (self.output_hi - self.output_lo) * v).collect())
    }

    pub fn to_unit(&self, u: f64) -> f64 {
        (u - self.output_lo) / (self.output_hi - self.output_lo)
    }

    /// Replaces the input statistics while leaving the network function
    /// unchanged, by folding the change into the first layer.
    pub fn restandardize(&mut self, mean: DVector<f64>, std: DVector<f64>) {
        let first = &mut self.layers[0];
        let shift = DVector::from_iterator(
            mean.len(),
            (0..mean.len()).map(|i| (mean[i] - self.input_mean[i]) / self.input_std[i]),
        );
        first.b += &first.w * shift;
        for i in 0..first.w.ncols() {
            let scale = std[i] / self.input_std[i];
            first.w.column_mut(i).scale_mut(scale);
        }
        self.input_mean = mean;
        self.input_std = std;
    }
}
