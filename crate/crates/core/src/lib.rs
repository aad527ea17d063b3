//! Deterministic discrete-event simulator of a market-oriented cloud
//! marketplace.

pub mod broker;
pub mod energy;
pub mod federation;
pub mod infrastructure;
pub mod kernel;
pub mod market;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod trace;
pub mod workload;
