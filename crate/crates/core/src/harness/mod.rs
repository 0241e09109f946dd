//! Experiment configuration, training runs, metrics and result files.

mod config;
mod metrics;
mod record;
mod runner;

pub use config::{
    DatasetSource, ExperimentConfig, ModelSelection, Parts, PoolerChoice, PoolerName, SplitSpec,
    Task, DEFAULT_BATCH, TIMING_BATCH,
};
pub use metrics::{accuracy, auroc, average_precision, macro_f1, mae, micro_f1, rmse, valid_range};
pub use record::{
    fmt_mean_std, load, mean_std, peak_rss_bytes, persist, summary_csv, RecordAppender,
    ResultRecord, RunStatus,
};
pub use runner::{
    embedding_table, evaluate_checkpoint, export_embeddings, run_experiment, run_experiment_on,
    split_for, split_keys, time_training, write_matrix_csv, Dataset, RunOutput, Timing,
    TrainedModel,
};
