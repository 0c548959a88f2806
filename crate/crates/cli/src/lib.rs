//! Experiment runner for the `mapft-core` adapters: configuration,
//! training runs with checkpoints and metrics, gradient checks, merging,
//! parameter accounting and timing.

// `!(x > y)` is used on purpose so that NaN falls on the rejecting side.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod merge;
pub mod params;
pub mod record;
pub mod setup;
pub mod tensorfile;
pub mod train;

pub use error::{CliError, Result};
