//! Training, evaluation, cross-validation and the modality/tap experiment
//! matrix.

mod config;
mod crossval;
mod early_stopping;
mod experiment;
mod fit;
pub mod metrics;

pub use config::{ModelSpec, TrainConfig};
pub use crossval::{cross_validate, CvOptions, CvReport, FoldResult, MeanSd};
pub use early_stopping::{run_with_early_stopping, stopping_trace, EarlyStopping, StoppedRun, Verdict};
pub use experiment::{
    benefit_margin, benefit_trial, experiment_matrix, holdout_comparison, render_table, select_tap, CellResult, ExperimentOptions, ExperimentReport,
    ExperimentRow, HoldoutRow,
};
pub use fit::{evaluate, plan_batches, predict, predict_logits, train, EpochRecord, History, TrainOutcome};
pub use metrics::{roc_auc, Confusion, MetricsReport, RocPoint};
