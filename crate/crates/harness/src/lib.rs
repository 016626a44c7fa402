//! Experiment harness: plans, seeded runs, persisted traces and the
//! median-run comparison report.

pub mod check;
pub mod experiment;
pub mod io;
pub mod plan;
pub mod report;
pub mod seeds;

pub use experiment::{run_experiment, run_single};
pub use plan::{ExperimentPlan, Method};
pub use report::{build_report, ComparisonReport};
