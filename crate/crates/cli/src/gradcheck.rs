//! Central finite-difference checks of the analytic gradients.

use std::fmt::Write as _;

use mapft_core::adapters::{init_adapter, AdapterState, FrozenBase, ParamRole};
use mapft_core::linalg::{gaussian_init, Matrix, Rng};
use mapft_core::tasks::{loss_and_grad, LossKind, Model, Split, Targets};

use crate::config::{TaskKind, TrainConfig};
use crate::error::Result;
use crate::setup::DROPOUT_TAG;

pub const TOLERANCE: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-6;
/// Batch size of the check instances.
pub const BATCH: usize = 4;
const GRADCHECK_TAG: u64 = 4;
/// Spread of `s·B` for the random `B` that exercises every gradient path;
/// dividing by the LoRA scaling keeps the update O(1) so the
/// finite differences stay well conditioned for any `lora_alpha`.
const B_STD: f64 = 0.5;

/// `|a − n| / max(|a|, |n|, 1e-3)`; the floor keeps near-zero entries
/// from dominating through cancellation noise.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupResult {
    pub group: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub groups: Vec<GroupResult>,
}

impl Report {
    pub fn failures(&self) -> Vec<&GroupResult> {
        self.groups.iter().filter(|g| !(g.max_rel_err < TOLERANCE)).collect()
    }

    pub fn max(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for g in &self.groups {
            let status = if g.max_rel_err < TOLERANCE { "ok" } else { "FAIL" };
            let _ = writeln!(out, "{:<14} {:>12.3e}  {status}", g.group, g.max_rel_err);
        }
        out
    }

    fn extend(&mut self, prefix: &str, other: Report) {
        for mut g in other.groups {
            g.group = format!("{prefix}{}", g.group);
            self.groups.push(g);
        }
    }
}

/// Corrupts an analytic gradient so the checker has something to catch.
fn corrupt(values: &mut [f64]) {
    for v in values {
        *v += 0.01 * (1.0 + v.abs());
    }
}

fn central(mut eval: impl FnMut(f64) -> mapft_core::Result<f64>) -> mapft_core::Result<f64> {
    Ok((eval(FD_STEP)? - eval(-FD_STEP)?) / (2.0 * FD_STEP))
}

fn max_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// Checks one adapter on the objective `⟨g, forward(x)⟩`. With `mask_rng`,
/// every evaluation replays the same dropout mask.
pub fn check_adapter(
    state: &AdapterState,
    x: &Matrix,
    g: &Matrix,
    mask_rng: Option<&Rng>,
    fault: Option<ParamRole>,
) -> mapft_core::Result<Report> {
    let objective = |s: &AdapterState, x: &Matrix| -> mapft_core::Result<f64> {
        let (y, _) = s.forward(x, mask_rng.cloned().as_mut())?;
        Ok(y.as_slice().iter().zip(g.as_slice()).map(|(a, b)| a * b).sum())
    };
    let (_, cache) = state.forward(x, mask_rng.cloned().as_mut())?;
    let mut grads = state.backward(g, &cache)?;
    if let Some(role) = fault {
        if let Some(v) = grads.get_mut(role) {
            corrupt(v);
        }
    }

    let mut report = Report::default();
    for &role in state.roles() {
        let (_, values) = state.param(role).expect("listed role");
        let mut numeric = Vec::with_capacity(values.len());
        for k in 0..values.len() {
            numeric.push(central(|h| {
                let mut s = state.clone();
                s.param_mut(role).expect("listed role")[k] += h;
                objective(&s, x)
            })?);
        }
        report.groups.push(GroupResult {
            group: role.name().to_string(),
            max_rel_err: max_err(grads.get(role).expect("listed role"), &numeric),
        });
    }
    let mut numeric = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        numeric.push(central(|h| {
            let mut xp = x.clone();
            xp.as_mut_slice()[k] += h;
            objective(state, &xp)
        })?);
    }
    report.groups.push(GroupResult {
        group: "x".into(),
        max_rel_err: max_err(grads.d_x.as_slice(), &numeric),
    });
    Ok(report)
}

/// Checks the loss gradient of every adapter in `model` on `batch`.
pub fn check_model(
    model: &Model,
    batch: &Split,
    mask_rng: Option<&Rng>,
    fault: Option<ParamRole>,
) -> mapft_core::Result<Report> {
    let loss = |m: &Model| -> mapft_core::Result<f64> { Ok(loss_and_grad(m, batch, mask_rng.cloned().as_mut())?.0) };
    let (_, mut grads) = loss_and_grad(model, batch, mask_rng.cloned().as_mut())?;
    if let Some(role) = fault {
        for b in &mut grads.adapters {
            if let Some(v) = b.get_mut(role) {
                corrupt(v);
            }
        }
    }
    let mut report = Report::default();
    for (i, (adapter, bundle)) in model.adapters().zip(&grads.adapters).enumerate() {
        for &role in adapter.roles() {
            let len = adapter.param(role).expect("listed role").1.len();
            let mut numeric = Vec::with_capacity(len);
            for k in 0..len {
                numeric.push(central(|h| {
                    let mut m = model.clone();
                    let a = m.adapters_mut().nth(i).expect("same layer count");
                    a.param_mut(role).expect("listed role")[k] += h;
                    loss(&m)
                })?);
            }
            report.groups.push(GroupResult {
                group: format!("layer{i}.{}", role.name()),
                max_rel_err: max_err(bundle.get(role).expect("listed role"), &numeric),
            });
        }
    }
    Ok(report)
}

/// Random instances shaped by `cfg`: a single `n x m` adapter and a
/// `n → hidden → m` model with the task's loss, both with a random `B`.
pub fn run(cfg: &TrainConfig, fault: Option<ParamRole>) -> Result<Report> {
    cfg.validate()?;
    let (n, m) = (cfg.adapter.n, cfg.adapter.m);
    let opts = cfg.init_options();
    let mut rng = Rng::stream(cfg.seed, GRADCHECK_TAG);
    let mask_rng = (opts.dropout_p > 0.0).then(|| Rng::stream(cfg.seed, DROPOUT_TAG));

    let base = FrozenBase::new(gaussian_init(&mut rng, n, m, 1.0 / (n as f64).sqrt()))?;
    let mut state = init_adapter(cfg.kind(), &mut rng, base, &opts)?;
    randomize_b(&mut state, &mut rng);
    let x = gaussian_init(&mut rng, BATCH, n, 1.0);
    let g = gaussian_init(&mut rng, BATCH, m, 1.0);
    let mut report = check_adapter(&state, &x, &g, mask_rng.as_ref(), fault)?;

    let loss = match cfg.task.kind {
        TaskKind::TeacherStudent => LossKind::Mse,
        TaskKind::Blobs => LossKind::CrossEntropy,
    };
    let mut model = Model::mlp(cfg.kind(), &mut rng, &[n, cfg.task.hidden, m], &opts, loss)?;
    for a in model.adapters_mut() {
        randomize_b(a, &mut rng);
    }
    let targets = match loss {
        LossKind::Mse => Targets::Regression(gaussian_init(&mut rng, BATCH, m, 1.0)),
        LossKind::CrossEntropy => Targets::Labels((0..BATCH).map(|i| i % m).collect()),
    };
    let batch = Split {
        x: gaussian_init(&mut rng, BATCH, n, 1.0),
        targets,
    };
    report.extend("model.", check_model(&model, &batch, mask_rng.as_ref(), fault)?);
    Ok(report)
}

fn randomize_b(state: &mut AdapterState, rng: &mut Rng) {
    let (r, m) = state.factors.b.shape();
    state.factors.b = gaussian_init(rng, r, m, B_STD / state.factors.scaling);
}
