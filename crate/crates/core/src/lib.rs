//! Evaluate IP blacklists against high-confidence ground truth.
//!
//! Ground truth comes from two sources: passive flow monitoring, where remote
//! hosts that contact many receive-only local addresses are flagged as
//! scanners ([`scan_detect`]), and server-side evidence such as repeated
//! authentication failures or closed-port contacts ([`log_sentinel`]).
//! Dated blacklist snapshots ([`blacklist_store`]) are matched against that
//! ground truth by the [`evaluator`], which also computes decay, propagation,
//! false-positive overlap and /24 aggregation. [`cloud_reputation`] queries
//! rate-limited reputation APIs under persistent budgets, and [`simgen`]
//! produces synthetic datasets with an exact ground-truth manifest.

pub mod par;
pub mod prefix_index;
pub mod blacklist_store;
pub mod ratio;
pub mod flow_pipeline;
pub mod log_sentinel;
pub mod scan_detect;
pub mod evaluator;
pub mod report;
pub mod cloud_reputation;
pub mod simgen;
