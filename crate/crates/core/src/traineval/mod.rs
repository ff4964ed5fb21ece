//! Training, evaluation metrics, seed aggregation and note-type ablations.

mod ablation;
mod metrics;
mod train;

pub use ablation::{
    prepare_splits, run_ablation, run_ablation_with, train_and_test, AblationPlan, AblationRow, AblationTable, Arm, Direction,
    MetricSummary, PreparedSplits, RunSummary, TaskData,
};
pub use metrics::{auprc, auroc, confidence_interval, macro_micro_auc, MacroMicro, MetricReport};
pub use train::{
    evaluate, examples, predict_examples, selection_metric, train, EpochRecord, Example, StayPredictions,
    TrainConfig, TrainOutcome,
};
