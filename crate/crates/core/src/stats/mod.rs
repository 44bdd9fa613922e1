//! Statistics used to evaluate subject scores against clinical assessments.

mod correlation;
mod kde;
mod metrics;

pub use correlation::{
    bootstrap_ci, correlate_pairs, correlate_scores, correlation_report, fisher_ci, join_scores, pearson, spearman,
    stratified_correlation, CiMethod, CiSpec, CorrelationReport, JoinedPair, ScoreCorrelation, SkippedStratum,
    StratifiedReport, MAX_RESAMPLE_ATTEMPTS, MIN_BOOTSTRAP_ITERS,
};
pub use kde::{kde, kde_at, silverman_bandwidth, DensityCurve, GRID_PAD_BANDWIDTHS, GRID_POINTS};
pub use metrics::{
    performance_metrics, GroupBy, MetricScope, PerformanceReport, DEFAULT_METRIC_BOOTSTRAP_ITERS, UNLABELED,
};
