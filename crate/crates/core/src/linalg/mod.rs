//! Dense linear algebra, the seeded RNG, and weight initializers.

mod init;
mod matrix;
mod rng;

pub use init::{gaussian_init, kaiming_init};
pub(crate) use matrix::dot;
pub use matrix::{col_norms, frob_inner, frob_norm, lowrank_frob_norm, matmul, Matrix};
pub use rng::Rng;
