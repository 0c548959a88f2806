//! Low-rank adaptation kernels with exact analytic gradients.
//!
//! Three rules for adapting a frozen weight `W` (shape `n x m`, applied as
//! `y = x·W_eff`) are provided:
//!
//! - **LoRA**: `W_eff = W + s·AB`
//! - **DoRA**: `W_eff = V·diag(m / ‖v_j‖)` with `V = W + s·AB`
//! - **MAP**: `W_eff = α·W/‖W‖_F + β·AB/‖AB‖_F`
//!
//! The crate is organised bottom-up: [`linalg`] (dense matrices, seeded
//! RNG, initializers), [`adapters`] (forward/backward/merge per rule),
//! [`tasks`] (synthetic datasets, small models, losses) and [`optim`]
//! (AdamW/SGD, linear warmup schedule, joint and stepwise training loops).

// `!(x > y)` is used on purpose so that NaN falls on the rejecting side.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapters;
pub mod error;
pub mod linalg;
pub mod optim;
pub mod tasks;

pub use error::{Error, Result};
