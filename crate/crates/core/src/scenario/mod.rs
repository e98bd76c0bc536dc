pub mod initial;
pub mod terrain;
pub mod track;
pub mod waypoints;

pub use initial::{sample_initial_states, InitialStateConfig};
pub use terrain::{facet_slope_stats, generate_terrain, SlopeStats, Terrain, TerrainTargets};
pub use waypoints::{running_cost, CostWeights, ScenarioState, TargetEvent};
