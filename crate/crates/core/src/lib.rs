//! Stage-wise SGD for stochastic contextual bandits.
//!
//! A reward model `f(d; x)` is fitted online by SGD on inverse-propensity
//! weighted squared loss, while a cluster-partitioned adaptive policy picks
//! actions from its estimates. The crate also provides the single-round
//! strongly convex variant, epsilon-greedy and greedy baselines, environments,
//! metrics and a reproducible run harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod env;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod policy;

pub use error::{BanditError, Result};
