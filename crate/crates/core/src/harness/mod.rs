//! Run harness: configuration files, metrics, checkpoints, plots, and
//! trajectory logs — everything around the algorithms.

pub mod checkpoint;
pub mod config;
pub mod jsonl;
pub mod metrics;
pub mod plot;
pub mod run;

pub use checkpoint::{Checkpoint, OptimizerState, TensorEntry, CHECKPOINT_VERSION};
pub use config::{
    AgentSection, ModelSection, ScheduleSection, SparseSection, TaskSection, TrainConfig,
};
pub use jsonl::{obs_digest, read_trajectory_log, StepRecord, TrajectoryLogger};
pub use metrics::{
    read_metrics, EvalColumns, MetricsRow, MetricsWriter, METRICS_HEADER, METRICS_SCHEMA_VERSION,
};
pub use plot::{
    learning_curve_return, learning_curve_success, render, reward_decoder_figure, PlotSpec, Series,
};
pub use run::{
    default_out_root, emit_plots, run_eval, run_eval_nonstationary, run_oracle_check, run_plot,
    run_train, run_train_sparse, EvalArtifacts, OracleCheck, RunManifest, TrainArtifacts,
    CODE_REVISION, OUT_ROOT_ENV,
};
