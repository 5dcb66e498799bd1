//! Parameter transfer between two overparameterized linear regressions.
//!
//! A source task is solved by min-norm least squares on a coordinate subset
//! S; some of its parameters (T ⊆ S) are then frozen into the target
//! estimator, which fits a further subset F and zeroes the rest. The crate
//! provides the estimators, closed-form expected errors for uniformly random
//! and specific layouts, and a seeded Monte Carlo harness to check them.

pub mod analytic;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod model;
pub mod montecarlo;

pub use error::{Error, Result};
