//! Run orchestration: configuration, the training loops, evaluation and reports.

pub mod baseline;
pub mod config;
pub mod evaluate;
pub mod report;
pub mod t6gps;

use crate::error::{Error, Result};

pub use baseline::run_baseline_gps;
pub use config::{derive_seed, RunConfig, RunMode, TerrainKind};
pub use evaluate::{evaluate, EpisodeSummary, EvaluationReport};
pub use report::{write_reports_csv, IterationReport, ReportRow, TrainingSummary, TrajectoryStats};
pub use t6gps::{run_t6gps, run_t6gps_iteration, RunOutput, Setup, TrainingState};

/// Runs `f` on a pool of `workers` threads; zero uses every core.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}
