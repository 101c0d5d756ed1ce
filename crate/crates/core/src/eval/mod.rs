//! Metrics, fold planning, and the cross-validation and out-of-domain
//! evaluation protocols.

mod folds;
pub mod metrics;
mod protocol;
mod report;

pub use folds::{stratified_folds, FoldPlan, IterationRoles};
pub use metrics::{accuracy, auc_ovr_macro, balanced_accuracy, confusion_matrix, sensitivities};
pub use protocol::{
    average_probabilities, cross_validate_with, evaluate_out_of_domain, evaluate_out_of_domain_tasks, iteration_dir,
    load_pipelines, run_cross_validation, task_roles, CvConfig, CvOutcome, CvReport, IterationRecord, Prediction,
    TaskIterationRecord, TaskOutcome, TrainedPipeline, OOD_MODELS,
};
pub use report::{summary_csv, write_summary_csv, EvalReport, Task, SUMMARY_HEADER};
