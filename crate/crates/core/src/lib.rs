//! Long-term fairness as constrained online reinforcement learning.
//!
//! A classifier-population simulator driven by replicator dynamics, the
//! UCBFair primal-dual LSVI agent, a myopic greedy baseline, and the harness
//! and wire protocol used to run them.

pub mod dynamics;
pub mod env;
pub mod error;
pub mod experiment;
pub mod featmap;
pub mod greedy;
pub mod harness;
pub mod features;
pub mod metrics;
pub mod oracle;
pub mod persist;
pub mod protocol;
pub mod rng;
pub mod types;
pub mod ucbfair;
pub mod voronoi;

pub use error::{Error, Result};
