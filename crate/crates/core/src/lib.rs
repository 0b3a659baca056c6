//! Causal-regularization toolkit: invariant causal prediction, linear
//! anchor regression and anchor boosting with pluggable base learners,
//! plus structural-equation simulators and an evaluation harness.

pub mod anchor;
pub mod boost;
pub mod data;
pub mod error;
pub mod eval;
pub mod icp;
pub mod importance;
pub mod invariance;
pub mod learners;
pub mod numerics;
pub mod sim;

pub use error::{Error, Result};
