//! Core model for guided pick-and-place tasks: the scene, the task manager,
//! the ground-truth assistant, the assistant gateway, audio plumbing and
//! dataset generation.

pub mod assistant;
pub mod catalog;
pub mod dataset;
pub mod gateway;
pub mod geometry;
pub mod http;
pub mod scenario;
pub mod scene;
pub mod snapshot;
pub mod speech;
pub mod task;
pub mod text;

pub use catalog::Catalog;
pub use geometry::{Aabb, Vec3};
pub use scenario::{load_scenario, DocumentError, Scenario};
pub use scene::{Contact, SceneError, SceneObject, SceneState};
pub use snapshot::{SceneSnapshot, Viewpoint, ViewpointName};
pub use task::{load_task, ActionSpec, TaskEvent, TaskProgress, TaskSpec};
