use thiserror::Error;

use crate::adapters::AdapterKind;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: left is {}x{}, right is {}x{}", .left.0, .left.1, .right.0, .right.1)]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("frozen base weight has zero Frobenius norm")]
    ZeroBase,

    #[error("low-rank update has Frobenius norm {norm:e} at initialization (after resampling)")]
    DegenerateUpdate { norm: f64 },

    #[error("low-rank update norm {norm:e} fell below the clamp {eps:e}; gradient is undefined")]
    NormUnderflow { norm: f64, eps: f64 },

    #[error("column {column} of W + s*AB has norm {norm:e}")]
    ZeroColumn { column: usize, norm: f64 },

    #[error("adapter kind mismatch: expected {expected}, found {found}")]
    KindMismatch { expected: AdapterKind, found: AdapterKind },

    #[error("{what} = {value} is outside [{lo}, {hi}]")]
    Range {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss at step {step} (lr {lr:e}); parameter norms: {param_norms}")]
    NonFiniteLoss { step: usize, lr: f64, param_norms: String },
}
