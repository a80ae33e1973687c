//! Forecast-driven pricing and replenishment planning for perishable goods.
//!
//! The crate is organized along the flow of a planning run:
//!
//! - [`data`]: sales history ingest, synthetic panels, windowing, correlation
//! - [`forecast`]: attention-pooled LSTM forecaster with exact gradients
//! - [`swarm`]: particle swarm optimizer
//! - [`pricing`]: cost-plus pricing, demand regression and plan profit
//! - [`pipeline`]: end-to-end runs, persisted run directories, feedback
//!   updates and a grid-search oracle

pub mod data;
pub mod forecast;
pub mod pipeline;
pub mod pricing;
pub mod swarm;

/// Version stamped into every JSON document this crate writes.
pub const SCHEMA_VERSION: u32 = 1;
