//! Checkpoints and merged-weight files.
//!
//! Both are a TOML manifest next to a raw little-endian `f64` payload. The
//! manifest carries the format version, the canonical config text with its
//! SHA-256, the payload's SHA-256 and a name/shape/offset entry per tensor.

use std::fs;
use std::path::{Path, PathBuf};

use mapft_core::linalg::Rng;
use mapft_core::optim::{Moments, OptimizerKind, OptimizerState, PhaseState};
use mapft_core::tasks::Model;
use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, TrainConfig};
use crate::error::{CliError, Result};
use crate::setup::{model_tensors, with_tensors};
use crate::tensorfile::{decode, encode, Tensor, TensorEntry};

pub const FORMAT_VERSION: u32 = 1;
const KIND_CHECKPOINT: &str = "checkpoint";
const KIND_MERGED: &str = "merged";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    kind: String,
    config_hash: String,
    step: usize,
    payload: String,
    payload_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    training: Option<TrainingState>,
    config: String,
    tensor: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainingState {
    /// Hex, since TOML integers are signed 64-bit.
    dropout_rng_state: String,
    optimizer: String,
    optimizer_step_count: u64,
    /// Per optimizer slot: number of updates applied (AdamW only).
    slot_updates: Vec<u64>,
}

/// Everything needed to continue a run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: usize,
    pub dropout_rng_state: u64,
    pub optimizer: OptimizerState,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn capture(config: &TrainConfig, model: &Model, state: &PhaseState) -> Self {
        Self {
            config: config.clone(),
            step: state.step,
            dropout_rng_state: state.dropout_rng.state(),
            optimizer: state.opt.clone(),
            tensors: model_tensors(model),
        }
    }

    /// Model with the saved tensors, shaped after `template`.
    pub fn model(&self, template: &Model) -> Result<Model> {
        with_tensors(template, &self.tensors)
    }

    /// Restores the step loop state on top of a fresh one built from the
    /// same config.
    pub fn restore_state(&self, mut fresh: PhaseState) -> PhaseState {
        fresh.opt = self.optimizer.clone();
        fresh.step = self.step;
        fresh.dropout_rng = Rng::from_state(self.dropout_rng_state);
        fresh
    }
}

/// Path of the payload that sits next to `manifest` (`x.toml` → `x.bin`).
pub fn payload_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

fn optimizer_name(kind: OptimizerKind) -> &'static str {
    match kind {
        OptimizerKind::Sgd => "sgd",
        OptimizerKind::AdamW => "adamw",
    }
}

fn write_files(path: &Path, mut manifest: Manifest, tensors: &[Tensor]) -> Result<()> {
    let (entries, bytes) = encode(tensors);
    let bin = payload_path(path);
    manifest.payload = bin
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| CliError::Config(format!("{} has no file name", path.display())))?;
    manifest.payload_sha256 = sha256_hex(&bytes);
    manifest.tensor = entries;
    let text = toml::to_string(&manifest).map_err(|e| CliError::Checkpoint(e.to_string()))?;
    fs::write(&bin, &bytes).map_err(CliError::io(&bin))?;
    fs::write(path, text).map_err(CliError::io(path))
}

fn new_manifest(kind: &str, config: &TrainConfig, step: usize, training: Option<TrainingState>) -> Manifest {
    Manifest {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        config_hash: config.hash(),
        step,
        payload: String::new(),
        payload_sha256: String::new(),
        training,
        config: config.canonical(),
        tensor: Vec::new(),
    }
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let opt = &ckpt.optimizer;
    let mut tensors = ckpt.tensors.clone();
    for (j, mo) in opt.moments().iter().enumerate() {
        for (tag, data) in [("m", &mo.m), ("v", &mo.v)] {
            tensors.push(Tensor {
                name: format!("opt.{j}.{tag}"),
                rows: 1,
                cols: data.len(),
                data: data.clone(),
            });
        }
    }
    let training = TrainingState {
        dropout_rng_state: format!("{:016x}", ckpt.dropout_rng_state),
        optimizer: optimizer_name(opt.kind()).to_string(),
        optimizer_step_count: opt.step_count(),
        slot_updates: opt.moments().iter().map(|m| m.updates).collect(),
    };
    write_files(
        path,
        new_manifest(KIND_CHECKPOINT, &ckpt.config, ckpt.step, Some(training)),
        &tensors,
    )
}

/// Reads a manifest, checking version, config hash and payload hash.
fn read_files(path: &Path, want_kind: &str) -> Result<(Manifest, TrainConfig, Vec<Tensor>)> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Checkpoint(format!("{}: {e}", path.display())))?;
    let version = table
        .get("format_version")
        .and_then(toml::Value::as_integer)
        .ok_or_else(|| CliError::Checkpoint(format!("{}: missing format_version", path.display())))?;
    if version != FORMAT_VERSION as i64 {
        return Err(CliError::Version {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: FORMAT_VERSION,
        });
    }
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| CliError::Checkpoint(format!("{}: {e}", path.display())))?;
    if manifest.kind != want_kind {
        return Err(CliError::Checkpoint(format!(
            "{} is a {} file, expected {want_kind}",
            path.display(),
            manifest.kind
        )));
    }
    let computed = sha256_hex(manifest.config.as_bytes());
    if computed != manifest.config_hash {
        return Err(CliError::Tampered {
            what: "config",
            recorded: manifest.config_hash.clone(),
            computed,
        });
    }
    let config = TrainConfig::from_toml(&manifest.config)?;
    config.validate()?;

    let bin = path.with_file_name(&manifest.payload);
    let bytes = fs::read(&bin).map_err(CliError::io(&bin))?;
    let computed = sha256_hex(&bytes);
    if computed != manifest.payload_sha256 {
        return Err(CliError::Tampered {
            what: "payload",
            recorded: manifest.payload_sha256.clone(),
            computed,
        });
    }
    let tensors = decode(&manifest.tensor, &bytes)?;
    Ok((manifest, config, tensors))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let (manifest, config, mut tensors) = read_files(path, KIND_CHECKPOINT)?;
    let training = manifest
        .training
        .ok_or_else(|| CliError::Checkpoint("checkpoint without training state".into()))?;
    let dropout_rng_state = u64::from_str_radix(&training.dropout_rng_state, 16)
        .map_err(|e| CliError::Checkpoint(format!("dropout_rng_state: {e}")))?;
    let kind = match training.optimizer.as_str() {
        "sgd" => OptimizerKind::Sgd,
        "adamw" => OptimizerKind::AdamW,
        other => return Err(CliError::Checkpoint(format!("unknown optimizer {other}"))),
    };
    if kind != config.optimizer_kind() {
        return Err(CliError::Checkpoint("optimizer kind disagrees with the config".into()));
    }

    let split = tensors
        .iter()
        .position(|t| t.name.starts_with("opt."))
        .unwrap_or(tensors.len());
    let opt_tensors = tensors.split_off(split);
    if opt_tensors.len() != 2 * training.slot_updates.len() {
        return Err(CliError::Checkpoint(format!(
            "{} optimizer tensors for {} slots",
            opt_tensors.len(),
            training.slot_updates.len()
        )));
    }
    let mut moments = Vec::new();
    for (j, (pair, &updates)) in opt_tensors.chunks(2).zip(&training.slot_updates).enumerate() {
        if pair[0].name != format!("opt.{j}.m") || pair[1].name != format!("opt.{j}.v") {
            return Err(CliError::Checkpoint(format!("optimizer slot {j} is malformed")));
        }
        moments.push(Moments {
            m: pair[0].data.clone(),
            v: pair[1].data.clone(),
            updates,
        });
    }
    let optimizer = OptimizerState::restore(kind, config.hyper(), training.optimizer_step_count, moments)?;
    Ok(Checkpoint {
        config,
        step: manifest.step,
        dropout_rng_state,
        optimizer,
        tensors,
    })
}

/// Dense effective weights of a checkpoint, one `layer{i}.w_eff` per
/// adapter layer.
#[derive(Debug, Clone)]
pub struct Merged {
    pub config: TrainConfig,
    pub step: usize,
    pub weights: Vec<Tensor>,
}

pub fn save_merged(path: &Path, merged: &Merged) -> Result<()> {
    write_files(
        path,
        new_manifest(KIND_MERGED, &merged.config, merged.step, None),
        &merged.weights,
    )
}

pub fn load_merged(path: &Path) -> Result<Merged> {
    let (manifest, config, weights) = read_files(path, KIND_MERGED)?;
    Ok(Merged {
        config,
        step: manifest.step,
        weights,
    })
}
