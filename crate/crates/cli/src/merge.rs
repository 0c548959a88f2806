//! Collapsing adapters into dense effective weights.

use std::path::Path;

use mapft_core::linalg::Matrix;
use mapft_core::tasks::Model;

use crate::checkpoint::{self, Merged};
use crate::error::Result;
use crate::setup::build;
use crate::tensorfile::Tensor;

/// `layer{i}.w_eff` for every adapter layer.
pub fn merge_model(model: &Model) -> Result<Vec<Tensor>> {
    model
        .adapters()
        .enumerate()
        .map(|(i, a)| Ok(Tensor::from_matrix(format!("layer{i}.w_eff"), &a.merge()?)))
        .collect()
}

/// Loads a checkpoint, materializes its layers and writes them to `out`
/// (manifest) plus the payload next to it.
pub fn merge_checkpoint(checkpoint_path: &Path, out: &Path) -> Result<Merged> {
    let ck = checkpoint::load(checkpoint_path)?;
    let template = build(&ck.config)?.model;
    let model = ck.model(&template)?;
    let merged = Merged {
        config: ck.config,
        step: ck.step,
        weights: merge_model(&model)?,
    };
    checkpoint::save_merged(out, &merged)?;
    Ok(merged)
}

/// Forward pass through merged weights: a dense product per layer with
/// `tanh` between consecutive layers, mirroring the adapter model.
pub fn merged_predict(weights: &[Tensor], x: &Matrix) -> Result<Matrix> {
    let mut h = x.clone();
    for (i, w) in weights.iter().enumerate() {
        if i > 0 {
            h = h.map(f64::tanh);
        }
        h = h.matmul(&w.to_matrix()?)?;
    }
    Ok(h)
}
