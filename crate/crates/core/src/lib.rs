//! Defaultable equity derivatives on a hazard-adjusted binomial lattice and
//! in its continuous-time limit.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod convergence;
pub mod default_sim;
pub mod error;
pub mod lattice;
pub mod model;
pub mod payoff;
pub mod pricer_continuous;
pub mod pricer_discrete;
pub mod rng;
pub mod stats;
pub mod table;

pub use error::{Error, Result};
