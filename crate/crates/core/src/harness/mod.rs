//! The active learning loop: configuration, per-seed simulation, record
//! persistence, and the tables built from stored records.

mod config;
pub mod report;
mod run;
pub mod store;

pub use config::{default_schedule, BackendConfig, EvalMode, RunConfig, Schedule};
pub use run::{
    build_backend, records_of, run, Evaluator, Experiment, ProfileRecord, RunRecord, SeedFailure,
    SeedOutcome, SelectionRecord,
};
pub use store::{read_records, run_and_persist, RunSummary, Store};
