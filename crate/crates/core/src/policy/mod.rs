pub mod dataset;
pub mod network;
pub mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{TrainingPair, TrainingSet};
pub use network::{Layer, PolicyParams};
pub use train::{gradient_check, loss_and_grad, train, Batch, GradCheckEntry, TrainConfig, TrainReport};

pub const CHECKPOINT_FORMAT: &str = "t6gps-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub format: String,
    pub version: u32,
    /// `[inputs, hidden..., outputs]`.
    pub layer_sizes: Vec<usize>,
    pub params: PolicyParams,
}

impl PolicyCheckpoint {
    pub fn new(params: PolicyParams) -> Self {
        let mut layer_sizes = vec![params.input_dim()];
        layer_sizes.extend(params.layers.iter().map(|l| l.w.nrows()));
        Self { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, layer_sizes, params }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PolicyParams> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let ck: PolicyCheckpoint = serde_json::from_reader(f)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, found {} v{}",
                ck.format, ck.version
            )));
        }
        let actual = Self::new(ck.params.clone()).layer_sizes;
        if actual != ck.layer_sizes {
            return Err(Error::Checkpoint(format!("layer sizes {:?} do not match weights {actual:?}", ck.layer_sizes)));
        }
        if !ck.params.is_finite() {
            return Err(Error::Checkpoint("non-finite parameters".into()));
        }
        Ok(ck.params)
    }
}
