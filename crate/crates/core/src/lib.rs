//! Context-aware safety monitoring for tele-operated surgical robots.
//!
//! The crate infers the current surgical gesture from kinematics, routes
//! each sliding window to a gesture-specific erroneous-gesture detector and
//! raises alerts. It also ships the synthetic Block Transfer simulator, the
//! fault injector with its failure oracle, and the evaluation harness used to
//! validate the monitor end to end.

pub mod classify;
pub mod error;
pub mod experiment;
pub mod fault;
pub mod folds;
pub mod kinematics;
pub mod metrics;
pub mod monitor;
pub mod nn;
pub mod seed;
pub mod sim;
pub mod task;

pub use error::{Error, Result};
