//! Label-free performance estimation for binary classifiers.
//!
//! Given confidence scores on a labelled validation set and an unlabelled test
//! set, the estimators in [`estimators`] predict the test confusion matrix and
//! from it any counting metric (accuracy, balanced accuracy, recall,
//! specificity, PPV, NPV, F1) plus ROC AUC. [`realized`] computes the same
//! metrics from labels, [`calibration`] offers temperature scaling, and
//! [`shiftsim`] simulates prevalence and covariate shifts to benchmark the
//! estimators against ground truth.

pub mod calibration;
pub mod error;
pub mod estimators;
pub mod keyvalue;
pub mod realized;
pub mod report;
pub mod scores;
pub mod shiftsim;

pub use calibration::{apply_temperature, fit_temperature, Temperature, TemperatureFit, TemperatureMode};
pub use error::{Error, Result, Side};
pub use estimators::{
    atc_estimate, cbpe, cbpe_accuracy, cbpe_pv, cm_atc, cm_doc, cm_from_pv, doc_estimate, estimate_all, estimate_auc,
    learn_atc_threshold, naive_estimate, AtcThreshold, AucEstimate, DocEstimate, DocOffset, EstimateAll,
    EstimationResult, Method, NaiveMethod,
};
pub use realized::{
    adaptive_calibration_error, counting_metrics, realized_auc, realized_confusion_matrix, realized_report,
    root_brier_score, AucMethod, CmSource, ConfusionMatrix, Metric, MetricReport, MetricValue,
};
pub use scores::{
    load_scores, predicted_confidence, split_predictions, PredictionSplit, ScoreFormat, ScoreRecord, ScoreSet,
};
pub use shiftsim::{
    generate_synthetic, mae_report, mix_groups, resample_prevalence, run_sweep, synthetic_inputs, GeneratorSpec,
    GroupKey, GroupLaw, GroupSpecs, LatentLaw, SweepConfig, SweepKind, SweepPools, SweepResult,
};
