//! Deterministic construction of datasets, models and training state from
//! a validated config.

use std::collections::HashMap;

use mapft_core::adapters::{
    init_adapter, AdapterState, DoraParams, FrozenBase, KindParams, LowRankFactors, MapParams, ParamRole,
};
use mapft_core::linalg::{Matrix, Rng};
use mapft_core::optim::{OptimizerState, PhaseState, Schedule};
use mapft_core::tasks::{
    gen_gaussian_blobs_with_radius, gen_teacher_student, Dataset, Layer, LossKind, Model, PlantedTarget,
    TeacherStudentSpec,
};

use crate::config::{TaskKind, TrainConfig};
use crate::error::{CliError, Result};
use crate::tensorfile::Tensor;

/// RNG stream tags; every consumer draws from its own stream of the seed.
pub const DATA_TAG: u64 = 1;
pub const INIT_TAG: u64 = 2;
pub const DROPOUT_TAG: u64 = 3;

#[derive(Debug, Clone)]
pub struct Run {
    pub data: Dataset,
    pub model: Model,
    pub planted: Option<PlantedTarget>,
}

pub fn build(cfg: &TrainConfig) -> Result<Run> {
    cfg.validate()?;
    let (t, a) = (&cfg.task, &cfg.adapter);
    let mut data_rng = Rng::stream(cfg.seed, DATA_TAG);
    let mut init_rng = Rng::stream(cfg.seed, INIT_TAG);
    let opts = cfg.init_options();
    Ok(match t.kind {
        TaskKind::TeacherStudent => {
            let spec = TeacherStudentSpec {
                n: a.n,
                m: a.m,
                r: a.r,
                a_star: t.a_star,
                b_star: t.b_star,
                samples: t.samples,
                noise_std: t.noise_std,
            };
            let (data, planted) = gen_teacher_student(&mut data_rng, &spec)?;
            let base = FrozenBase::new(planted.w_base.clone())?;
            let adapter = init_adapter(cfg.kind(), &mut init_rng, base, &opts)?;
            Run {
                data,
                model: Model::single(adapter),
                planted: Some(planted),
            }
        }
        TaskKind::Blobs => {
            let data = gen_gaussian_blobs_with_radius(&mut data_rng, a.n, a.m, t.samples, t.radius)?;
            let model = Model::mlp(cfg.kind(), &mut init_rng, &cfg.dims(), &opts, LossKind::CrossEntropy)?;
            Run {
                data,
                model,
                planted: None,
            }
        }
    })
}

pub fn phase_state(cfg: &TrainConfig) -> Result<PhaseState> {
    cfg.validate()?;
    let opt = OptimizerState::new(cfg.optimizer_kind(), cfg.hyper())?;
    let schedule = Schedule::new(cfg.optimizer.warmup_steps, cfg.total_steps(), cfg.optimizer.lr)?;
    let mut state = PhaseState::new(
        opt,
        schedule,
        cfg.opt_mode(),
        cfg.batch_size,
        cfg.seed,
        Rng::stream(cfg.seed, DROPOUT_TAG),
    )?;
    state.record_time = cfg.record_step_time;
    Ok(state)
}

/// Base weights and trainable tensors of every adapter layer, named
/// `layer{i}.w`, `layer{i}.a`, `layer{i}.b`, `layer{i}.alpha`, ...
pub fn model_tensors(model: &Model) -> Vec<Tensor> {
    let mut out = Vec::new();
    for (i, adapter) in model.adapters().enumerate() {
        out.push(Tensor::from_matrix(format!("layer{i}.w"), adapter.base().w()));
        for &role in adapter.roles() {
            let ((rows, cols), values) = adapter.param(role).expect("listed role");
            out.push(Tensor {
                name: format!("layer{i}.{}", role.name()),
                rows,
                cols,
                data: values.to_vec(),
            });
        }
    }
    out
}

fn take(tensors: &HashMap<&str, &Tensor>, name: &str, shape: (usize, usize)) -> Result<Matrix> {
    let t = tensors
        .get(name)
        .ok_or_else(|| CliError::Checkpoint(format!("missing tensor {name}")))?;
    if (t.rows, t.cols) != shape {
        return Err(CliError::Checkpoint(format!(
            "tensor {name} has shape {}x{}, expected {}x{}",
            t.rows, t.cols, shape.0, shape.1
        )));
    }
    if t.data.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Checkpoint(format!("tensor {name} holds non-finite values")));
    }
    t.to_matrix()
}

/// Copy of `template` with every adapter's base and parameters replaced
/// by the named tensors. Names and shapes must match the template exactly.
pub fn with_tensors(template: &Model, tensors: &[Tensor]) -> Result<Model> {
    let by_name: HashMap<&str, &Tensor> = tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut layers = Vec::new();
    let mut used = 0;
    let mut i = 0;
    for layer in template.layers() {
        let Layer::Adapter(a) = layer else {
            layers.push(layer.clone());
            continue;
        };
        let get = |role: &str, shape| take(&by_name, &format!("layer{i}.{role}"), shape);
        let base = FrozenBase::new(get("w", a.base().shape())?)?;
        let factors = LowRankFactors::new(
            get(ParamRole::FactorA.name(), a.factors.a.shape())?,
            get(ParamRole::FactorB.name(), a.factors.b.shape())?,
            a.factors.scaling,
        )?;
        let params = match &a.params {
            KindParams::PlainLora => KindParams::PlainLora,
            KindParams::Map(_) => KindParams::Map(MapParams {
                alpha: get(ParamRole::Alpha.name(), (1, 1))?.get(0, 0),
                beta: get(ParamRole::Beta.name(), (1, 1))?.get(0, 0),
            }),
            KindParams::Dora(d) => KindParams::Dora(DoraParams {
                mags: get(ParamRole::Mags.name(), (1, d.mags.len()))?.into_vec(),
            }),
        };
        used += 1 + a.roles().len();
        i += 1;
        layers.push(Layer::Adapter(AdapterState::from_parts(
            base,
            factors,
            params,
            a.dropout_p(),
        )?));
    }
    if used != tensors.len() {
        return Err(CliError::Checkpoint(format!(
            "expected {used} tensors for this model, found {}",
            tensors.len()
        )));
    }
    Ok(Model::new(layers, template.loss_kind())?)
}
