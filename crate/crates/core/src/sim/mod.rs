pub mod engine;
pub mod model;
pub mod state;

pub use engine::{bar_angular_velocities, settle_neutral, step};
pub use model::{build_robot, Face, FaceId, FaceKind, PhysicalParams, RobotModel, Vec3};
pub use state::{ControlCommand, FullState};
