//! Shared-autonomy engine: infers a teacher's goal from teleoperation input,
//! blends autonomous assistance with the human command, and decides when and
//! how to ask for help.

pub mod assist;
pub mod batch;
pub mod error;
pub mod feedback;
pub mod inference;
pub mod model;
pub mod replay;
pub mod session;
pub mod teacher;
pub mod wire;

pub use error::{Error, Result};
pub use inference::Belief;
pub use model::{ActionVec, Goal, GoalId, Position, Scene, SimConfig, Vec3};
pub use session::{run_episode, Episode, EpisodeMetrics, Session, TickRecord};
pub use teacher::{AttentionPolicy, Rationality, TeacherModel};
