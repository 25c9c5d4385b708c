//! Measures how far re-scraped (ex-situ) copies of logged page visits drift
//! from what the visitor actually saw (in-situ), and whether that drift
//! skews downstream category distributions.
//!
//! The crate is organised as a pipeline:
//!
//! - [`visit_store`] ingests visit logs and applies refresh / gap filters.
//! - [`url_taxonomy`] decides which URLs are news articles and tags them.
//! - [`harness`] schedules and performs delayed fetches under two profiles.
//! - [`simulator`] is a deterministic news site used as a fetch target.
//! - [`extraction`] turns HTML into raw and cleaned text.
//! - [`metrics`] holds edit distances and the statistics on top of them.
//! - [`bias`] compares category distributions and searches for debias plans.
//! - [`pipeline`] and [`report`] drive full audits and render figures.

pub mod bias;
pub mod blob;
pub mod cli;
pub mod error;
pub mod extraction;
pub mod harness;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod simulator;
pub mod url_taxonomy;
pub mod visit_store;

pub use error::{Error, Result};
