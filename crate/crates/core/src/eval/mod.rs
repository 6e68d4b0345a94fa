//! Metrics, heatmaps, runtime and variance reports.

mod heatmap;
mod metrics;
mod report;
mod runtime;

pub use heatmap::{residual_heatmap, Heatmap, HeatmapScale, HeatmapSpec};
pub use metrics::{
    epe, evaluate_samples, threeway_epe, Bucket, ThreewayAccumulator, ThreewayReport, DYNAMIC_SPEED,
};
pub use report::{
    loglog_slope, prefix_len, report_csv, scaling_csv, scaling_curve, sort_rows, variance_report,
    write_report_csv, BucketMeans, ReportRow, ScalingPoint, VarianceReport, REPORT_HEADER,
};
pub use runtime::{bench_runtime, RuntimeStats};
