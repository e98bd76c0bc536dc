pub mod error;
pub mod linalg;
pub mod pipeline;
pub mod localization;
pub mod policy;
pub mod rollout;
pub mod scenario;
pub mod sim;
pub mod symmetry;
pub mod trajopt;

pub use error::{Error, Result};
