//! Learning-rate schedule, SGD/AdamW and the training loop with joint or
//! alternating (stepwise) parameter groups.

mod optimizer;
mod phase;
mod schedule;

pub use optimizer::{Hyper, Moments, OptimizerKind, OptimizerState, ParamSlot};
pub use phase::{run_phase, OptMode, ParamMask, PhaseState, StepRow, SHUFFLE_TAG};
pub use schedule::Schedule;
