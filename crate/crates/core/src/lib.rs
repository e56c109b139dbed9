//! Cleaning of recorded European option quotes.
//!
//! Three stages run in a fixed order: quotes outside their no-arbitrage
//! interval are dropped, then a quadratic smile is fitted per option type and
//! maturity and quotes whose residual leaves the simultaneous band are
//! dropped, then repeated contracts are reduced to one quote each.
//! [`pipeline::run_pipeline`] runs all three and returns the kept quotes with
//! a [`pipeline::CleaningReport`].

pub mod model;
pub mod numerics;
pub mod arbitrage_filter;
pub mod outlier_detector;
pub mod dedup;
pub mod pipeline;
pub mod ingest;
pub mod synthgen;
