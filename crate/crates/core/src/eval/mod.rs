//! Point cloud reconstruction metrics.

mod metrics;
mod nn;

pub use metrics::{
    accuracy_distance, completeness_distance, evaluate, percentage_metrics, EvalConfig,
    MetricReport, ThresholdMetrics,
};
pub use nn::{nearest_brute_force, point_distance, NeighborGrid};
