//! Config-driven training runs, multi-seed comparisons and diagnostics.

pub mod compare;
pub mod config;
pub mod diagnostics;
pub mod metrics;
pub mod runner;

pub use compare::{compare_methods, ComparisonReport, MethodSummary};
pub use config::{CompareConfig, ConfigMap, ExperimentConfig, FisherSource, Method};
pub use diagnostics::{run_diagnostics, DiagnosticsReport};
pub use metrics::{MetricsRow, MetricsTable, CSV_HEADER};
pub use runner::{run_experiment, RunOutcome};
