//! Per-class, per-warped-step surrogate models and their census.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ransac::{fit_multimodal, Mode, PointSet};
use super::{Localization, LocalizationConfig, Reduction, SegmentClass};
use crate::error::Result;
use crate::sim::model::NUM_CABLES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellModels {
    pub point_count: usize,
    pub modes: Vec<Mode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassModels {
    pub class: SegmentClass,
    pub warped_length: usize,
    pub segment_count: usize,
    pub cells: Vec<CellModels>,
}

impl ClassModels {
    /// Nearest cell with at least one mode, preferring the earlier one on ties.
    pub fn nearest_fitted(&self, cell: usize) -> Option<usize> {
        (0..self.cells.len())
            .filter(|&c| !self.cells[c].modes.is_empty())
            .min_by_key(|&c| (c.abs_diff(cell), c))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModelSet {
    pub reduction: Reduction,
    pub state_dim: usize,
    pub control_dim: usize,
    /// Indexed like [`Localization::classes`].
    pub classes: Vec<ClassModels>,
}

fn cell_seed(seed: u64, class: usize, cell: usize) -> u64 {
    seed ^ (((class as u64) << 32) | cell as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl SurrogateModelSet {
    /// Fits every (class, warped step) cell; cells are independent and run in parallel.
    pub fn fit(loc: &Localization, cfg: &LocalizationConfig, seed: u64) -> Self {
        let n = cfg.reduction.dim();
        let m = NUM_CABLES;
        let mut members: Vec<Vec<Vec<(usize, usize)>>> =
            loc.warped_lengths.iter().map(|&tx| vec![Vec::new(); tx]).collect();
        for (ti, bs) in loc.bindings.iter().enumerate() {
            for (t, b) in bs.iter().enumerate() {
                if b.in_segment {
                    members[b.class][b.cell].push((ti, t));
                }
            }
        }
        let min_fit = cfg.ransac.min_fit(n, m);
        let jobs: Vec<(usize, usize)> =
            members.iter().enumerate().flat_map(|(c, cells)| (0..cells.len()).map(move |k| (c, k))).collect();
        let fitted: Vec<CellModels> = jobs
            .par_iter()
            .map(|&(c, k)| {
                let rows: Vec<(&[f64], &[f64], &[f64])> = members[c][k]
                    .iter()
                    .map(|&(ti, t)| {
                        let p = &loc.points[ti][t];
                        (p.x.as_slice(), p.u.as_slice(), p.x_next.as_slice())
                    })
                    .collect();
                let modes = if rows.is_empty() {
                    Vec::new()
                } else {
                    fit_multimodal(&PointSet::new(&rows), min_fit, &cfg.ransac, cell_seed(seed, c, k))
                };
                CellModels { point_count: rows.len(), modes }
            })
            .collect();

        let mut it = fitted.into_iter();
        let classes = loc
            .classes
            .iter()
            .enumerate()
            .map(|(c, class)| ClassModels {
                class: *class,
                warped_length: loc.warped_lengths[c],
                segment_count: loc.segments.iter().filter(|s| s.class == c).count(),
                cells: it.by_ref().take(loc.warped_lengths[c]).collect(),
            })
            .collect();
        Self { reduction: cfg.reduction, state_dim: n, control_dim: m, classes }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }

    pub fn census(&self) -> Vec<ClassCensus> {
        self.classes
            .iter()
            .map(|c| {
                let modes: Vec<usize> = c.cells.iter().map(|k| k.modes.len()).collect();
                let fitted = modes.iter().filter(|&&k| k > 0).count();
                ClassCensus {
                    class: c.class.label(),
                    face_type: format!("{:?}", c.class.face_type),
                    entry: format!("{:?}", c.class.entry),
                    exit: format!("{:?}", c.class.exit),
                    partial: format!("{:?}", c.class.partial),
                    warped_length: c.warped_length,
                    segments: c.segment_count,
                    points: c.cells.iter().map(|k| k.point_count).sum(),
                    fitted_cells: fitted,
                    total_modes: modes.iter().sum(),
                    max_modes: modes.iter().copied().max().unwrap_or(0),
                    mean_modes: if fitted > 0 { modes.iter().sum::<usize>() as f64 / fitted as f64 } else { 0.0 },
                    low_rank_cells: c.cells.iter().filter(|k| k.modes.iter().any(|m| m.low_rank)).count(),
                }
            })
            .collect()
    }
}

/// One row of the per-iteration class census.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCensus {
    pub class: String,
    pub face_type: String,
    pub entry: String,
    pub exit: String,
    pub partial: String,
    pub warped_length: usize,
    pub segments: usize,
    pub points: usize,
    pub fitted_cells: usize,
    pub total_modes: usize,
    pub max_modes: usize,
    pub mean_modes: f64,
    pub low_rank_cells: usize,
}

pub fn write_census_csv<W: Write>(w: W, rows: &[ClassCensus]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| crate::error::Error::Io(std::io::Error::other(e)))?;
    }
    wr.flush()?;
    Ok(())
}
