//! Data generation, fitting pipeline, closed-loop scenarios, logs and metrics.

pub mod config;
pub mod datagen;
pub mod eval;
pub mod log;
pub mod metrics;
pub mod output;
pub mod sim;

pub use config::{
    ControllerConfig, GaitRequest, Scenario, SimConfig, Slip, TerrainConfig, VelocityStep,
    SCENARIO_PRESETS,
};
pub use datagen::{
    fit_mode, generate_training_data, mode_seed, nominal_forces, TrainingConfig, TrainingData,
    TrainingDistribution,
};
pub use eval::{evaluate_against, evaluate_fit, FitEvaluation, Plant, SrbPlant};
pub use log::{LogRecord, QpStats, RunLog, LOG_COLUMNS};
pub use metrics::{compute_metrics, percentile, rmse, Metrics};
pub use output::{emit_outputs, OutputPaths};
pub use sim::{
    run_closed_loop, run_closed_loop_with_dump, run_transition_scenario, ModelSet, SimOutput,
};
