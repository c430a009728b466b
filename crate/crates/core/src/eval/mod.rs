//! Evaluation protocols, multi-run orchestration and accuracy summaries.

mod metrics;
mod report;
mod runner;
mod splits;

pub use metrics::{
    accuracy, accuracy_stats, confusion_matrix, mean, per_class_recall, sum_confusion,
};
pub use report::{EvalReport, MethodReport, RunResult, SessionCount, SessionSummary};
pub use runner::{
    augment_seed, check_no_leakage, fit_cnn, run_experiment, run_seed, Classifier, CnnClassifier,
    ExperimentSpec, FitOutcome, FoldData, MethodSpec, RunOptions,
};
pub use splits::{
    kfold_splits, lopo_partitions, make_splits, participant_partitions, ParticipantSplit, Protocol,
    SampleMeta, Split,
};
