//! Evaluation metrics and permutation feature importance.

mod importance;
mod metrics;

pub use importance::{
    permutation_importance, permutation_importance_with, FeatureImportance, Forecaster,
    ImportanceReport, DEFAULT_REPEATS,
};
pub use metrics::{
    compute_metrics, metrics, pollutant_label, Metrics, MetricsReport, PollutantMetrics, Series,
    EPSILON_MAPE,
};
