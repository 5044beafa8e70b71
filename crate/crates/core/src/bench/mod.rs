//! Experiment harness behind the `bench` binary.

pub mod config;
pub mod experiment;
pub mod ops;
pub mod plot;

pub use config::{checkpoint_schedule, DataSpec, DimExpr, OptimizerSpec, RunConfig, ScheduleSpec};
pub use experiment::{read_records, run_experiment, ExperimentSummary, RunRecord, CSV_COLUMNS};
pub use plot::{emit_plots, summarize};
