//! Simulation and verification toolkit for optimal control of McKean-Vlasov
//! branching diffusions.

// `!(a <= b)` is used on purpose so that NaN fails the comparison.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cost;
pub mod engine;
pub mod error;
pub mod fokker_planck;
pub mod lq;
pub mod meanfield;
pub mod measures;
pub mod output;
pub mod stats;
pub mod time;
pub mod verify;

pub use error::{Error, Result};
pub use time::{TimeFn, TimeFnSpec, TimeGrid};
