//! Experiment orchestration: configuration, seeded runs, evaluation and
//! metric files.

mod config;
mod eval;
mod runner;

pub use config::{parse_config, EnvSpec, ExperimentConfig, MacsMode, MacsSection, OfflineSpec, Schedule};
pub use eval::{
    eval_episode_seed, evaluate_ctr, evaluate_ctr_logged, evaluate_offline_metrics, EvalStep, OfflineMetrics,
};
pub use runner::{
    aggregate_csv, build_env, cf_checkpoint_file, checkpoint_file, config_hash, load_ratings, mean_std, metrics_csv,
    metrics_file, read_ctr_column, run_experiment, run_experiment_in, run_seed, sweep_hidden_sizes, BuiltEnv,
    ExperimentReport, MetricsRow, SeedRun, SweepReport, SweepRow, AGGREGATE_HEADER, DEFAULT_HIDDEN_SIZES,
    METRICS_HEADER, SWEEP_HEADER,
};
