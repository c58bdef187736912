//! Demonstration-warm-started value learning under sparse rewards.
//!
//! Tabular Q-learning on grid worlds (with regret analytics) and a
//! categorical-value network agent on a continuous point-navigation task.

pub mod approx;
pub mod demos;
pub mod env;
pub mod env_grid;
pub mod env_pointnav;
pub mod error;
pub mod regret;
pub mod tabular;

pub use demos::{DemoSet, Trajectory};
pub use env::{Environment, Episode, StepOutcome};
pub use env_grid::{Difficulty, GridSpec};
pub use env_pointnav::PointNavSpec;
pub use error::{Error, Result};
pub use tabular::QTable;
