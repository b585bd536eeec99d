//! Experiment harness: plans, paired-seed comparisons, reports, traces and
//! the sampler sweep behind the command-line tool.

pub mod compare;
pub mod plan;
pub mod report;
pub mod sweep;

pub use compare::{load_comparison, run_all, run_comparison, run_condition, Comparison};
pub use plan::{Condition, ExperimentPlan, ObjectiveConfig};
pub use report::{
    build_report, emit_traces, finding_metrics, parse_report_json, render_report, trace_shape,
    ComparisonReport, ConditionLogs, FindingMetrics, ReportFormat, ReportRow,
};
pub use sweep::{suite_sweep, sweep_member, SweepRow, SweepSummary};
