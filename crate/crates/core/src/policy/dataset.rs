//! Accumulated observation / improved-action pairs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::network::STD_FLOOR;
use crate::error::{Error, Result};
use crate::sim::model::NUM_CABLES;
use crate::symmetry::OBS_DIM;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub iteration: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub pairs: Vec<TrainingPair>,
    /// Weight of pairs from the newest iteration relative to older ones.
    pub recency_weight: f64,
    /// Keep only the newest `window` iterations; `None` accumulates everything.
    pub window: Option<usize>,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Default for TrainingSet {
    fn default() -> Self {
        Self::new(OBS_DIM, NUM_CABLES)
    }
}

impl TrainingSet {
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        Self { pairs: Vec::new(), recency_weight: 2.0, window: None, input_dim, output_dim }
    }

    pub fn push(&mut self, y: Vec<f64>, u: Vec<f64>, iteration: usize) -> Result<()> {
        if y.len() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, got: y.len() });
        }
        if u.len() != self.output_dim {
            return Err(Error::DimensionMismatch { expected: self.output_dim, got: u.len() });
        }
        self.pairs.push(TrainingPair { y, u, iteration });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.active().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn newest_iteration(&self) -> Option<usize> {
        self.pairs.iter().map(|p| p.iteration).max()
    }

    pub fn active(&self) -> impl Iterator<Item = &TrainingPair> {
        let newest = self.newest_iteration().unwrap_or(0);
        let oldest = self.window.map_or(0, |w| (newest + 1).saturating_sub(w.max(1)));
        self.pairs.iter().filter(move |p| p.iteration >= oldest)
    }

    /// Drops pairs that fall outside the window.
    pub fn prune(&mut self) {
        let keep: Vec<TrainingPair> = self.active().cloned().collect();
        self.pairs = keep;
    }

    /// Per-feature mean and standard deviation of the active inputs.
    pub fn input_stats(&self) -> (DVector<f64>, DVector<f64>) {
        let n = self.len().max(1) as f64;
        let mut mean: DVector<f64> = DVector::zeros(self.input_dim);
        for p in self.active() {
            for (m, v) in mean.iter_mut().zip(&p.y) {
                *m += v / n;
            }
        }
        let mut var: DVector<f64> = DVector::zeros(self.input_dim);
        for p in self.active() {
            for (i, v) in p.y.iter().enumerate() {
                var[i] += (v - mean[i]).powi(2) / n;
            }
        }
        let std = var.map(|v: f64| if v.sqrt() < STD_FLOOR { 1.0 } else { v.sqrt() });
        (mean, std)
    }

    /// Column-per-sample input and target matrices plus per-sample weights.
    pub fn matrices(&self) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
        let newest = self.newest_iteration().unwrap_or(0);
        let active: Vec<&TrainingPair> = self.active().collect();
        let n = active.len();
        let x = DMatrix::from_fn(self.input_dim, n, |i, j| active[j].y[i]);
        let t = DMatrix::from_fn(self.output_dim, n, |i, j| active[j].u[i]);
        let w = DVector::from_fn(n, |j, _| if active[j].iteration == newest { self.recency_weight } else { 1.0 });
        (x, t, w)
    }
}
