//! Metrics, latency measurement and experiment reports.

pub mod bench;
pub mod matrix;
pub mod metrics;
pub mod report;

pub use bench::{benchmark_inference, LatencyStats};
pub use matrix::{
    run_experiment_matrix, CellRun, EvalReport, MatrixOptions, MatrixOutput, NeedleData, RunSummary,
};
pub use metrics::{mae, mean_std, quantile_sorted, relative_difference};
pub use report::{write_reports, REFERENCE_LATENCY_MS};
