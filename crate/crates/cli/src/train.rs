//! The `train` command: fresh runs, resumption and run artifacts.
//!
//! An output directory holds `config.toml` (canonical text; its SHA-256 is
//! the config hash), `metrics.csv`, `checkpoint.toml` + `checkpoint.bin`
//! and `summary.txt`.

use std::fs;
use std::path::{Path, PathBuf};

use mapft_core::adapters::{param_count, AdapterKind};
use mapft_core::optim::{run_phase, PhaseState, StepRow};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{TaskKind, TrainConfig};
use crate::error::{CliError, Result};
use crate::record::{write_metrics, Summary};
use crate::setup::{build, phase_state, Run};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.toml";
pub const SUMMARY_FILE: &str = "summary.txt";

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    /// Rows produced by this invocation.
    pub rows: Vec<StepRow>,
    pub summary: Summary,
    pub completed: bool,
}

/// Starts a run from step 0. `stop_after` ends it early at that global
/// step (a checkpoint is written either way).
pub fn train(cfg: &TrainConfig, out: &Path, stop_after: Option<usize>) -> Result<TrainOutcome> {
    let run = build(cfg)?;
    let state = phase_state(cfg)?;
    state.validate(&run.model)?;
    prepare_dir(cfg, out)?;
    execute(cfg, run, state, out, stop_after, None)
}

/// Continues from a checkpoint. Without `out` the run continues in the
/// checkpoint's directory and extends its `metrics.csv`.
pub fn resume(checkpoint_path: &Path, out: Option<&Path>, stop_after: Option<usize>) -> Result<TrainOutcome> {
    let ck = checkpoint::load(checkpoint_path)?;
    let cfg = ck.config.clone();
    let mut run = build(&cfg)?;
    run.model = ck.model(&run.model)?;
    let state = ck.restore_state(phase_state(&cfg)?);
    let out = match out {
        Some(p) => p.to_path_buf(),
        None => checkpoint_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    prepare_dir(&cfg, &out)?;
    let keep = ck.step;
    execute(&cfg, run, state, &out, stop_after, Some(keep))
}

fn prepare_dir(cfg: &TrainConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    let path = out.join(CONFIG_FILE);
    fs::write(&path, cfg.canonical()).map_err(CliError::io(&path))
}

fn execute(
    cfg: &TrainConfig,
    mut run: Run,
    mut state: PhaseState,
    out: &Path,
    stop_after: Option<usize>,
    keep: Option<usize>,
) -> Result<TrainOutcome> {
    let total = cfg.total_steps();
    let target = stop_after.map_or(total, |s| s.min(total));
    if target < state.step {
        return Err(CliError::Config(format!(
            "--stop-after {target} is before the checkpoint step {}",
            state.step
        )));
    }
    let metrics = out.join(METRICS_FILE);
    let mut rows = Vec::with_capacity(target - state.step);
    while state.step < target {
        match run_phase(&mut run.model, &run.data.train, &mut state, 1) {
            Ok(r) => rows.extend(r),
            Err(e) => {
                // keep the trajectory up to the failure for diagnosis
                write_metrics(&metrics, &rows, keep)?;
                return Err(e.into());
            }
        }
    }
    write_metrics(&metrics, &rows, keep)?;
    checkpoint::save(
        &out.join(CHECKPOINT_FILE),
        &Checkpoint::capture(cfg, &run.model, &state),
    )?;

    let completed = state.step == total;
    let summary = summarize(cfg, &run, state.step, completed)?;
    let path = out.join(SUMMARY_FILE);
    fs::write(&path, summary.render()).map_err(CliError::io(&path))?;
    log::info!("{} steps done, summary in {}", state.step, path.display());
    Ok(TrainOutcome {
        out_dir: out.to_path_buf(),
        rows,
        summary,
        completed,
    })
}

fn summarize(cfg: &TrainConfig, run: &Run, step: usize, completed: bool) -> Result<Summary> {
    let mut s = Summary::default();
    s.push("config_hash", cfg.hash());
    s.push("seed", cfg.seed);
    s.push(
        "task",
        if cfg.task.kind == TaskKind::Blobs {
            "blobs"
        } else {
            "teacher-student"
        },
    );
    s.push("adapter", cfg.kind().name());
    s.push("steps", step);
    s.push("total_steps", cfg.total_steps());
    s.push("completed", completed);

    let lora: usize = cfg
        .dims()
        .windows(2)
        .map(|w| param_count(AdapterKind::PlainLora, w[0], w[1], cfg.adapter.r))
        .sum();
    let trainable = run.model.trainable_count();
    s.push("trainable_params", trainable);
    s.push("lora_params", lora);
    s.push("overhead_vs_lora", trainable - lora);

    s.push("train_loss", run.model.loss(&run.data.train)?);
    s.push("val_loss", run.model.loss(&run.data.val)?);
    if let Some(acc) = run.model.accuracy(&run.data.val)? {
        s.push("val_accuracy", acc);
    }
    for (i, a) in run.model.adapters().enumerate() {
        if let Some(p) = a.map_params() {
            s.push(format!("layer{i}.alpha"), p.alpha);
            s.push(format!("layer{i}.beta"), p.beta);
        }
    }
    if let Some(t) = &run.planted {
        s.push("a_star", t.a_star);
        s.push("b_star", t.b_star);
    }
    Ok(s)
}
