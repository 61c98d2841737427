//! Discrete-event simulation of a single-gateway LoRa network.

pub mod energy;
pub mod engine;
pub mod gateway;
pub mod metrics;
pub mod queue;
pub mod study;

pub use engine::{run_simulation, NodeSummary, RunStatus, SimulationReport, REPORT_HEADER, TRACE_HEADER};
