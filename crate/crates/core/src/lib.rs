//! Block-graph cost analysis, roofline latency modeling, multi-hardware
//! metrics and a staged architecture search for mobile vision networks.

pub mod cost;
pub mod executor;
pub mod ir;
pub mod latency;
pub mod metrics;
pub mod report;
pub mod roofline;
pub mod search;
pub mod stats;
pub mod zoo;

pub use cost::{block_cost, network_cost, BlockCost, CostReport, DtypeWidths};
pub use ir::{BlockSpec, NetworkSpec, TensorShape};
