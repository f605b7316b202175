//! Curriculum learning toolkit: difficulty scoring, pacing functions,
//! class-balanced curriculum sampling, SGD training, gradient analysis and
//! finite-instance checks of the utility-landscape theory.

pub mod data;
pub mod error;
pub mod gradients;
pub mod harness;
pub mod model;
pub mod pacing;
pub mod schedule;
pub mod scoring;
pub mod sequencer;
pub mod stats;
pub mod theory;
pub mod trainer;

pub use data::{Dataset, Example};
pub use error::{Error, Result};
pub use model::{Architecture, Model};
pub use pacing::{PacingSpec, PacingVariant};
pub use schedule::LrSchedule;
pub use scoring::ScoreTable;
pub use sequencer::CurriculumPlan;
pub use trainer::{train, LearningCurve, TrainOptions};
