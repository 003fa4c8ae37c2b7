//! Closed-loop simulation, induction metrics and the Monte-Carlo runner.

pub mod closed_loop;
pub mod metrics;
pub mod montecarlo;
pub mod output;

pub use closed_loop::{run_closed_loop, run_with_controller, RunTrace, TraceRow};
pub use metrics::{
    compute_metrics, compute_metrics_from_series, summarize, CohortSummary, MetricStats,
    MetricsRecord, TargetBand,
};
pub use montecarlo::{run_cohort, run_monte_carlo, MonteCarloResult, RunRecord};
