//! Heightfield terrain: triangulated grid, facet statistics and procedural generation.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::model::Vec3;

/// Facet-statistics targets used by [`generate_terrain`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerrainTargets {
    pub mean_slope_deg: f64,
    pub std_slope_deg: f64,
    pub max_variation: f64,
}

impl TerrainTargets {
    pub const ROUGH: TerrainTargets =
        TerrainTargets { mean_slope_deg: 38.0, std_slope_deg: 16.0, max_variation: 1.55 };
    pub const MILD: TerrainTargets =
        TerrainTargets { mean_slope_deg: 20.0, std_slope_deg: 10.0, max_variation: 0.8 };
}

/// Measured facet statistics of a terrain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeStats {
    pub mean_deg: f64,
    pub std_deg: f64,
    pub max_variation: f64,
}

impl SlopeStats {
    pub fn within(&self, t: &TerrainTargets, slope_tol_deg: f64, var_tol: f64) -> bool {
        (self.mean_deg - t.mean_slope_deg).abs() <= slope_tol_deg
            && (self.std_deg - t.std_slope_deg).abs() <= slope_tol_deg
            && (self.max_variation - t.max_variation).abs() <= var_tol
    }
}

/// Regular height grid. Each cell is split along its `(0,0)-(1,1)` diagonal into
/// two planar facets, so the surface is continuous and piecewise linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Terrain {
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
    /// World coordinates of grid vertex `(0, 0)`.
    pub origin: (f64, f64),
    /// Row-major heights, `heights[iy * nx + ix]`.
    pub heights: Vec<f64>,
    pub seed: Option<u64>,
    pub targets: Option<TerrainTargets>,
}

pub const DEFAULT_EXTENT: f64 = 30.0;
pub const DEFAULT_CELL: f64 = 0.25;

impl Terrain {
    /// Square grid of side `extent` centred on the origin with heights from `f(x, y)`.
    pub fn from_fn(extent: f64, cell_size: f64, f: impl Fn(f64, f64) -> f64) -> Self {
        let n = (extent / cell_size).round() as usize + 1;
        let origin = (-0.5 * (n - 1) as f64 * cell_size, -0.5 * (n - 1) as f64 * cell_size);
        let mut heights = Vec::with_capacity(n * n);
        for iy in 0..n {
            for ix in 0..n {
                let x = origin.0 + ix as f64 * cell_size;
                let y = origin.1 + iy as f64 * cell_size;
                heights.push(f(x, y));
            }
        }
        Self { cell_size, nx: n, ny: n, origin, heights, seed: None, targets: None }
    }

    pub fn flat() -> Self {
        Self::from_fn(DEFAULT_EXTENT, DEFAULT_CELL, |_, _| 0.0)
    }

    /// Uniform incline rising along +x.
    pub fn ramp(angle_deg: f64) -> Self {
        let g = angle_deg.to_radians().tan();
        Self::from_fn(DEFAULT_EXTENT, DEFAULT_CELL, move |x, _| g * x)
    }

    pub fn extent(&self) -> (f64, f64) {
        ((self.nx - 1) as f64 * self.cell_size, (self.ny - 1) as f64 * self.cell_size)
    }

    pub fn center(&self) -> (f64, f64) {
        let (ex, ey) = self.extent();
        (self.origin.0 + 0.5 * ex, self.origin.1 + 0.5 * ey)
    }

    fn h(&self, ix: usize, iy: usize) -> f64 {
        self.heights[iy * self.nx + ix]
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        self.height_and_normal(x, y).0
    }

    /// Surface height and upward unit normal at a ground-plane point. Outside the
    /// grid the border heights extend flat.
    pub fn height_and_normal(&self, x: f64, y: f64) -> (f64, Vec3) {
        let cs = self.cell_size;
        let (gx, cx) = clamp_axis((x - self.origin.0) / cs, self.nx);
        let (gy, cy) = clamp_axis((y - self.origin.1) / cs, self.ny);
        let ix = (gx.floor() as usize).min(self.nx - 2);
        let iy = (gy.floor() as usize).min(self.ny - 2);
        let u = gx - ix as f64;
        let v = gy - iy as f64;
        let h00 = self.h(ix, iy);
        let h10 = self.h(ix + 1, iy);
        let h01 = self.h(ix, iy + 1);
        let h11 = self.h(ix + 1, iy + 1);
        let (h, du, dv) = if u >= v {
            (h00 + u * (h10 - h00) + v * (h11 - h10), h10 - h00, h11 - h10)
        } else {
            (h00 + u * (h11 - h01) + v * (h01 - h00), h11 - h01, h01 - h00)
        };
        let hx = if cx { 0.0 } else { du / cs };
        let hy = if cy { 0.0 } else { dv / cs };
        (h, Vec3::new(-hx, -hy, 1.0).normalize())
    }

    /// Height gradients of both facets of every cell.
    fn facet_gradients(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let cs = self.cell_size;
        (0..self.ny - 1).flat_map(move |iy| {
            (0..self.nx - 1).flat_map(move |ix| {
                let h00 = self.h(ix, iy);
                let h10 = self.h(ix + 1, iy);
                let h01 = self.h(ix, iy + 1);
                let h11 = self.h(ix + 1, iy + 1);
                [((h10 - h00) / cs, (h11 - h10) / cs), ((h11 - h01) / cs, (h01 - h00) / cs)]
            })
        })
    }

    pub fn max_height_in(&self, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
        let mut best = f64::NEG_INFINITY;
        let steps = ((x1 - x0).max(y1 - y0) / self.cell_size).ceil().max(1.0) as usize;
        for i in 0..=steps {
            for j in 0..=steps {
                let x = x0 + (x1 - x0) * i as f64 / steps as f64;
                let y = y0 + (y1 - y0) * j as f64 / steps as f64;
                best = best.max(self.height(x, y));
            }
        }
        best
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let (ex, ey) = self.extent();
        writeln!(w, "terrain v1")?;
        writeln!(w, "extent_x {ex}")?;
        writeln!(w, "extent_y {ey}")?;
        writeln!(w, "cell_size {}", self.cell_size)?;
        writeln!(w, "nx {}", self.nx)?;
        writeln!(w, "ny {}", self.ny)?;
        writeln!(w, "origin_x {}", self.origin.0)?;
        writeln!(w, "origin_y {}", self.origin.1)?;
        match self.seed {
            Some(s) => writeln!(w, "seed {s}")?,
            None => writeln!(w, "seed none")?,
        }
        if let Some(t) = self.targets {
            writeln!(w, "target_mean_slope_deg {}", t.mean_slope_deg)?;
            writeln!(w, "target_std_slope_deg {}", t.std_slope_deg)?;
            writeln!(w, "target_max_variation {}", t.max_variation)?;
        }
        writeln!(w, "heights")?;
        let mut line = String::new();
        for row in self.heights.chunks(self.nx) {
            line.clear();
            for (i, h) in row.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                let _ = write!(line, "{h:?}");
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let bad = |m: String| Error::Config(format!("terrain file: {m}"));
        let mut lines = r.lines();
        let magic = lines.next().transpose()?.unwrap_or_default();
        if magic.trim() != "terrain v1" {
            return Err(bad(format!("unexpected header `{magic}`")));
        }
        let mut fields = std::collections::HashMap::new();
        for line in lines.by_ref() {
            let line = line?;
            let line = line.trim();
            if line == "heights" {
                break;
            }
            if let Some((k, v)) = line.split_once(' ') {
                fields.insert(k.to_string(), v.trim().to_string());
            }
        }
        let num = |k: &str| -> Result<f64> {
            fields
                .get(k)
                .ok_or_else(|| bad(format!("missing `{k}`")))?
                .parse::<f64>()
                .map_err(|e| bad(format!("`{k}`: {e}")))
        };
        let nx = num("nx")? as usize;
        let ny = num("ny")? as usize;
        let mut heights = Vec::with_capacity(nx * ny);
        for line in lines {
            for tok in line?.split_whitespace() {
                heights.push(tok.parse::<f64>().map_err(|e| bad(format!("height: {e}")))?);
            }
        }
        if heights.len() != nx * ny || nx < 2 || ny < 2 {
            return Err(bad(format!("expected {} heights, found {}", nx * ny, heights.len())));
        }
        let targets = match (
            num("target_mean_slope_deg"),
            num("target_std_slope_deg"),
            num("target_max_variation"),
        ) {
            (Ok(m), Ok(s), Ok(v)) => Some(TerrainTargets {
                mean_slope_deg: m,
                std_slope_deg: s,
                max_variation: v,
            }),
            _ => None,
        };
        Ok(Self {
            cell_size: num("cell_size")?,
            nx,
            ny,
            origin: (num("origin_x")?, num("origin_y")?),
            heights,
            seed: fields.get("seed").and_then(|s| s.parse().ok()),
            targets,
        })
    }
}

fn clamp_axis(g: f64, n: usize) -> (f64, bool) {
    let max = (n - 1) as f64;
    if g < 0.0 {
        (0.0, true)
    } else if g > max {
        (max, true)
    } else {
        (g, false)
    }
}

/// Exact slope statistics over all triangular facets.
pub fn facet_slope_stats(terrain: &Terrain) -> SlopeStats {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for (gx, gy) in terrain.facet_gradients() {
        let slope = gx.hypot(gy).atan().to_degrees();
        sum += slope;
        sum_sq += slope * slope;
        count += 1;
    }
    let mean = sum / count as f64;
    let var = (sum_sq / count as f64 - mean * mean).max(0.0);
    let (lo, hi) = terrain
        .heights
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &h| (lo.min(h), hi.max(h)));
    SlopeStats { mean_deg: mean, std_deg: var.sqrt(), max_variation: hi - lo }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, octave: u32, ix: i64, iy: i64) -> f64 {
    let h = splitmix(
        seed ^ splitmix(octave as u64 ^ splitmix((ix as u64).wrapping_mul(0x1000_0001) ^ splitmix(iy as u64))),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn value_noise(seed: u64, octave: u32, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let (ix, iy) = (x0 as i64, y0 as i64);
    let (u, v) = (fade(x - x0), fade(y - y0));
    let a = lattice(seed, octave, ix, iy);
    let b = lattice(seed, octave, ix + 1, iy);
    let c = lattice(seed, octave, ix, iy + 1);
    let d = lattice(seed, octave, ix + 1, iy + 1);
    let top = a + u * (b - a);
    let bottom = c + u * (d - c);
    top + v * (bottom - top)
}

/// Shape parameters of the multi-octave noise field.
#[derive(Clone, Copy, Debug)]
struct NoiseShape {
    /// Base spatial frequency (1/m).
    frequency: f64,
    /// Amplitude ratio between successive octaves.
    persistence: f64,
}

const OCTAVES: u32 = 4;

fn noise_terrain(seed: u64, shape: NoiseShape, max_variation: f64) -> Terrain {
    let mut t = Terrain::from_fn(DEFAULT_EXTENT, DEFAULT_CELL, |x, y| {
        let mut h = 0.0;
        let mut w = 1.0;
        let mut f = shape.frequency;
        for o in 0..OCTAVES {
            h += w * value_noise(seed, o, x * f, y * f);
            w *= shape.persistence;
            f *= 2.0;
        }
        h
    });
    let (lo, hi) =
        t.heights.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &h| (lo.min(h), hi.max(h)));
    let span = (hi - lo).max(1e-300);
    for h in &mut t.heights {
        *h = (*h - lo) / span * max_variation;
    }
    t.seed = Some(seed);
    t
}

/// Result of terrain generation, including whether the targets were met.
#[derive(Clone, Debug)]
pub struct GeneratedTerrain {
    pub terrain: Terrain,
    pub stats: SlopeStats,
    pub converged: bool,
    pub iterations: usize,
}

pub const SLOPE_TOLERANCE_DEG: f64 = 2.0;
pub const VARIATION_TOLERANCE: f64 = 0.1;
const MAX_RESCALE_ITERATIONS: usize = 50;

/// Multi-octave value-noise heightfield rescaled until its facet statistics meet
/// the targets. Heights are normalized to the exact variation target; the base
/// frequency steers the mean slope and the octave persistence steers the spread.
pub fn generate_terrain(seed: u64, targets: TerrainTargets) -> Result<GeneratedTerrain> {
    for (name, v) in [
        ("target_mean_slope", targets.mean_slope_deg),
        ("target_std_slope", targets.std_slope_deg),
        ("target_max_var", targets.max_variation),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidParameter { name, reason: format!("got {v}") });
        }
    }
    if targets.max_variation == 0.0 || targets.mean_slope_deg == 0.0 {
        let mut terrain = Terrain::flat();
        terrain.seed = Some(seed);
        terrain.targets = Some(targets);
        let stats = facet_slope_stats(&terrain);
        let converged = stats.within(&targets, SLOPE_TOLERANCE_DEG, VARIATION_TOLERANCE);
        return Ok(GeneratedTerrain { terrain, stats, converged, iterations: 0 });
    }

    let target_tan = targets.mean_slope_deg.to_radians().tan();
    let target_ratio = targets.std_slope_deg / targets.mean_slope_deg;
    let mut shape = NoiseShape { frequency: 0.4, persistence: 0.5 };
    let mut best: Option<(f64, Terrain, SlopeStats)> = None;
    let mut iterations = 0;
    for it in 0..MAX_RESCALE_ITERATIONS {
        iterations = it + 1;
        let terrain = noise_terrain(seed, shape, targets.max_variation);
        let stats = facet_slope_stats(&terrain);
        let err = (stats.mean_deg - targets.mean_slope_deg).abs()
            + (stats.std_deg - targets.std_slope_deg).abs()
            + 20.0 * (stats.max_variation - targets.max_variation).abs();
        let better = best.as_ref().is_none_or(|(e, _, _)| err < *e);
        if better {
            best = Some((err, terrain, stats));
        }
        log::debug!("terrain iteration {it}: {shape:?} -> {stats:?}");
        if stats.within(&targets, 0.5 * SLOPE_TOLERANCE_DEG, 0.5 * VARIATION_TOLERANCE) {
            break;
        }
        // Gradients scale roughly linearly with frequency at fixed amplitude.
        let tan_mean = stats.mean_deg.to_radians().tan().max(1e-6);
        shape.frequency *= (target_tan / tan_mean).clamp(0.5, 2.0);
        // Heavier high octaves widen the slope distribution.
        let ratio = stats.std_deg / stats.mean_deg.max(1e-9);
        shape.persistence =
            (shape.persistence + 0.8 * (target_ratio - ratio)).clamp(0.05, 0.95);
    }
    let (_, mut terrain, stats) = best.expect("at least one iteration");
    terrain.targets = Some(targets);
    let converged = stats.within(&targets, SLOPE_TOLERANCE_DEG, VARIATION_TOLERANCE);
    if !converged {
        log::warn!(
            "terrain rescaling did not converge after {iterations} iterations: {stats:?} vs {targets:?}"
        );
    }
    Ok(GeneratedTerrain { terrain, stats, converged, iterations })
}
