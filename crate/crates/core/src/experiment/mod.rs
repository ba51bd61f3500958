//! Experiment configs, runs, baselines and metrics.

pub mod config;
pub mod convergence;
pub mod metrics;
pub mod runner;

pub use config::{DataSpecFile, DatasetSpec, EngineKind, ExperimentConfig, Method, TransportKind};
pub use convergence::{convergence_study, ConvergenceConfig, ConvergenceResult};
pub use metrics::{accuracy, r2_score, rounds_to_reach, selection, selection_precision, Selection};
pub use runner::{
    comm_report, compare, gini_scores, prepare, run_experiment, run_file, series, write_outputs, CommReport, CompareRow,
    FinalMetrics, GiniTable, Prepared, RunOutput, RunReport, Trainer,
};
