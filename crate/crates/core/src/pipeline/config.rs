//! Run configuration: a flat `key = value` file whose keys are the field
//! names below.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localization::{LocalizationConfig, RansacConfig, Reduction};
use crate::policy::TrainConfig;
use crate::scenario::terrain::TerrainTargets;
use crate::scenario::waypoints::CostWeights;
use crate::sim::model::PhysicalParams;
use crate::trajopt::TrajoptConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    T6gps,
    Baseline,
    Evaluate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerrainKind {
    Flat,
    /// Generated to `terrain_mean_slope_deg` / `terrain_std_slope_deg` / `terrain_max_variation`.
    Generated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: RunMode,
    pub iterations: usize,
    /// Rollouts per iteration (N).
    pub samples: usize,
    /// Control steps per rollout (T).
    pub horizon: usize,
    /// Sub-trajectory length.
    pub sub_horizon: usize,
    pub reduction: Reduction,
    pub multimodal: bool,
    pub max_modes: usize,
    pub ransac_iterations: usize,
    pub truncation_cap: usize,
    pub min_warped_length: usize,
    /// Zero selects the per-class median segment length.
    pub warped_length: usize,
    pub kl_weight: f64,
    /// The KL weight halves when more than this fraction of windows is skipped.
    pub kl_skip_threshold: f64,
    pub noise_start: f64,
    pub noise_end: f64,
    pub seed: u64,
    pub terrain: TerrainKind,
    pub terrain_seed: u64,
    pub terrain_mean_slope_deg: f64,
    pub terrain_std_slope_deg: f64,
    pub terrain_max_variation: f64,
    pub waypoint_radius: f64,
    pub waypoint_timeout: f64,
    pub waypoint_spacing_min: f64,
    pub waypoint_spacing_max: f64,
    pub target_speed: f64,
    pub cost_weight_vertical: f64,
    pub train_epochs: usize,
    pub learning_rate: f64,
    pub recency_weight: f64,
    /// Zero accumulates every iteration's pairs.
    pub data_window: usize,
    /// Zero uses every available core.
    pub workers: usize,
    pub baseline_directions: usize,
    pub eval_episodes: usize,
    pub eval_horizon: usize,
    /// Stop early once the mean cost improves by less than 2% over two iterations.
    pub plateau_stop: bool,
    pub log_trajectories: bool,
    pub dt: f64,
    #[serde(flatten)]
    pub physics: PhysicalParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::T6gps,
            iterations: 4,
            samples: 30,
            horizon: 100,
            sub_horizon: 15,
            reduction: Reduction::Nodes,
            multimodal: true,
            max_modes: 6,
            ransac_iterations: 100,
            truncation_cap: 50,
            min_warped_length: 5,
            warped_length: 0,
            kl_weight: 1.0,
            kl_skip_threshold: 0.2,
            noise_start: 0.04,
            noise_end: 0.01,
            seed: 0,
            terrain: TerrainKind::Flat,
            terrain_seed: 0,
            terrain_mean_slope_deg: TerrainTargets::ROUGH.mean_slope_deg,
            terrain_std_slope_deg: TerrainTargets::ROUGH.std_slope_deg,
            terrain_max_variation: TerrainTargets::ROUGH.max_variation,
            waypoint_radius: 0.485,
            waypoint_timeout: 5.0,
            waypoint_spacing_min: 2.0,
            waypoint_spacing_max: 4.0,
            target_speed: 0.8,
            cost_weight_vertical: 0.1,
            train_epochs: 300,
            learning_rate: 1e-3,
            recency_weight: 2.0,
            data_window: 0,
            workers: 0,
            baseline_directions: 8,
            eval_episodes: 10,
            eval_horizon: 300,
            plateau_stop: false,
            log_trajectories: true,
            dt: crate::sim::engine::DEFAULT_DT,
            physics: PhysicalParams::default(),
        }
    }
}

impl RunConfig {
    /// Rough-terrain training at the published scale.
    pub fn paper_t6gps() -> Self {
        Self { iterations: 5, samples: 300, horizon: 250, terrain: TerrainKind::Generated, ..Self::default() }
    }

    /// Flat-ground fixed-condition baseline at the published scale.
    pub fn paper_baseline() -> Self {
        Self {
            mode: RunMode::Baseline,
            iterations: 10,
            baseline_directions: 36,
            samples: 50,
            horizon: 16,
            ..Self::default()
        }
    }

    pub fn desk_baseline() -> Self {
        Self { mode: RunMode::Baseline, iterations: 3, baseline_directions: 8, samples: 10, horizon: 16, ..Self::default() }
    }

    /// Sampled control steps over the whole run.
    pub fn sample_budget(&self) -> usize {
        match self.mode {
            RunMode::Baseline => self.iterations * self.baseline_directions * self.samples * self.horizon,
            _ => self.iterations * self.samples * self.horizon,
        }
    }

    /// Exploration noise of iteration `i` (1-based), linear from start to end.
    pub fn noise_scale(&self, i: usize) -> f64 {
        if self.iterations <= 1 {
            return self.noise_start;
        }
        let f = (i.clamp(1, self.iterations) - 1) as f64 / (self.iterations - 1) as f64;
        self.noise_start + f * (self.noise_end - self.noise_start)
    }

    pub fn terrain_targets(&self) -> TerrainTargets {
        TerrainTargets {
            mean_slope_deg: self.terrain_mean_slope_deg,
            std_slope_deg: self.terrain_std_slope_deg,
            max_variation: self.terrain_max_variation,
        }
    }

    pub fn cost_weights(&self) -> CostWeights {
        CostWeights([1.0, 1.0, self.cost_weight_vertical])
    }

    pub fn localization(&self, noise: f64) -> LocalizationConfig {
        LocalizationConfig {
            truncation_cap: self.truncation_cap,
            min_warped_length: self.min_warped_length,
            fixed_warped_length: (self.warped_length > 0).then_some(self.warped_length),
            reduction: self.reduction,
            ransac: RansacConfig {
                iterations: self.ransac_iterations,
                max_modes: if self.multimodal { self.max_modes } else { 1 },
                policy_noise_floor: 0.25 * noise * noise,
                ..RansacConfig::default()
            },
        }
    }

    pub fn trajopt(&self, kl_weight: f64, noise: f64) -> TrajoptConfig {
        TrajoptConfig {
            horizon: self.sub_horizon,
            kl_weight,
            policy_noise_floor: 0.25 * noise * noise,
            ..TrajoptConfig::default()
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig { epochs: self.train_epochs, learning_rate: self.learning_rate, ..TrainConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("iterations", self.iterations),
            ("samples", self.samples),
            ("horizon", self.horizon),
            ("truncation_cap", self.truncation_cap),
            ("max_modes", self.max_modes),
            ("ransac_iterations", self.ransac_iterations),
            ("baseline_directions", self.baseline_directions),
            ("eval_episodes", self.eval_episodes),
            ("eval_horizon", self.eval_horizon),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidParameter { name, reason: "must be positive".into() });
            }
        }
        if self.sub_horizon < 2 {
            return Err(Error::InvalidParameter { name: "sub_horizon", reason: "must be at least 2".into() });
        }
        let non_negative = [
            ("kl_weight", self.kl_weight),
            ("noise_start", self.noise_start),
            ("noise_end", self.noise_end),
            ("cost_weight_vertical", self.cost_weight_vertical),
            ("recency_weight", self.recency_weight),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter { name, reason: format!("must be non-negative, got {v}") });
            }
        }
        let positive = [
            ("waypoint_radius", self.waypoint_radius),
            ("waypoint_timeout", self.waypoint_timeout),
            ("target_speed", self.target_speed),
            ("learning_rate", self.learning_rate),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter { name, reason: format!("must be positive, got {v}") });
            }
        }
        if !(self.waypoint_spacing_min > 0.0 && self.waypoint_spacing_min <= self.waypoint_spacing_max) {
            return Err(Error::InvalidParameter {
                name: "waypoint_spacing_min",
                reason: "need 0 < waypoint_spacing_min <= waypoint_spacing_max".into(),
            });
        }
        if self.dt > crate::sim::engine::MAX_DT {
            return Err(Error::InvalidParameter { name: "dt", reason: format!("must not exceed {}", crate::sim::engine::MAX_DT) });
        }
        self.physics.validate()
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses a config file; keys left out keep their defaults and unknown keys are rejected.
    pub fn from_text(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let known: BTreeSet<String> = Self::default()
            .to_text()?
            .parse::<toml::Table>()
            .map_err(|e| Error::Config(e.to_string()))?
            .keys()
            .cloned()
            .collect();
        if let Some(bad) = table.keys().find(|k| !known.contains(*k)) {
            return Err(Error::Config(format!("unknown key `{bad}`")));
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }
}

/// Independent stream seed for `(seed, tag, index)`.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_budgets() {
        assert_eq!(RunConfig::paper_t6gps().sample_budget(), 375_000);
        assert_eq!(RunConfig::paper_baseline().sample_budget(), 288_000);
        assert_eq!(RunConfig::default().sample_budget(), 12_000);
        assert_eq!(RunConfig::desk_baseline().sample_budget(), 3_840);
    }

    #[test]
    fn text_round_trip_and_unknown_keys() {
        let mut c = RunConfig::default();
        c.reduction = Reduction::NodesCables;
        c.kl_weight = 0.5;
        c.physics.friction_coefficient = 0.7;
        let text = c.to_text().unwrap();
        assert!(text.contains("reduction = \"nodes+cables\""));
        assert!(text.contains("friction_coefficient = 0.7"));
        assert!(text.lines().all(|l| l.is_empty() || l.contains(" = ")));
        assert_eq!(RunConfig::from_text(&text).unwrap(), c);
        assert_eq!(RunConfig::from_text("samples = 7\n").unwrap().samples, 7);
        assert!(matches!(RunConfig::from_text("sampels = 7\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_text("horizon = 0\n"), Err(Error::InvalidParameter { .. })));
        assert!(RunConfig::from_text("reduction = \"bogus\"\n").is_err());
    }

    #[test]
    fn noise_schedule_endpoints() {
        let c = RunConfig::default();
        assert_eq!(c.noise_scale(1), 0.04);
        assert!((c.noise_scale(4) - 0.01).abs() < 1e-15);
        assert!(c.noise_scale(2) < c.noise_scale(1));
    }
}
