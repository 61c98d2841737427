//! Batch execution, exhibit reproduction and CSV output.

pub mod batch;
pub mod reference;
pub mod reproduce;

pub use batch::{run_scenario, worker_count, ScenarioOutcome, WORKERS_ENV};
pub use reproduce::{reproduce, Exhibit, ReproduceOptions};
