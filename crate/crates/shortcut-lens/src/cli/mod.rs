//! Experiment runner: one JSON config file in, training runs,
//! evaluations, analyses, and sweeps out.

mod commands;
mod config;
mod data;

pub use commands::{
    cmd_analyze, cmd_eval, cmd_sweep, cmd_train, spawn_sweep_points, AnalyzeOutputs, EvalReport,
    ExperimentRecord, SweepReport,
};
pub use config::{
    write_atomic, AnalysisSettings, DataConfig, DataKind, EvalSettings, ExperimentConfig,
    Resolved, DATA_ENV,
};
pub use data::{load_folder_split, load_split, probe_split};
