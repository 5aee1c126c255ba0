//! Incentive-aware active inference with sentinel auditing.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod design;
pub mod effort;
pub mod error;
pub mod estimate;
pub mod harness;
pub mod mestimate;
pub mod optimize;
pub mod payment;
pub mod rng;
pub mod simulate;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
