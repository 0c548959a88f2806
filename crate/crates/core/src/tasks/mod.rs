//! Synthetic tasks, small models and losses.
//!
//! The teacher–student task plants a target of the MAP form
//! `a_star·Ŵ + b_star·û` so that training can be checked against known
//! ground truth; Gaussian blobs give a classification problem for the MLP
//! path.

mod data;
mod model;

pub use data::{
    gen_gaussian_blobs, gen_gaussian_blobs_with_radius, gen_teacher_student, Dataset, PlantedTarget, Split, Targets,
    TeacherStudentSpec, BLOB_RADIUS, VAL_FRACTION,
};
pub use model::{loss_and_grad, Layer, LossKind, Model, ModelGrads};
