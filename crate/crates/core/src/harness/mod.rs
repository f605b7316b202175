//! Experiment orchestration: configuration, repeated runs, summaries,
//! grid search and bootstrapping.

pub mod config;
pub mod experiment;
pub mod grid;

pub use config::{derive_seed, Condition, DatasetSpec, ExperimentConfig, ScoringSpec, Selection};
pub use experiment::{
    bootstrap_loop, gradient_study, run_experiment, run_on, BootstrapGeneration, ExperimentRun, ExperimentSummary,
    GradientStudy, Manifest,
};
pub use grid::{two_stage_grid_search, GridSearchResult, GridSpec};
