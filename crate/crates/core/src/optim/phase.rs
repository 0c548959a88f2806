use std::fmt;
use std::time::Instant;

use super::{OptimizerState, ParamSlot, Schedule};
use crate::adapters::ParamRole;
use crate::error::{Error, Result};
use crate::linalg::Rng;
use crate::tasks::{loss_and_grad, Model, Split};

/// Stream tag for the per-epoch shuffles; epoch `e` uses
/// `Rng::stream(seed, SHUFFLE_TAG + e)`.
pub const SHUFFLE_TAG: u64 = 0x5348_5546_0000_0000;

/// A set of [`ParamRole`]s.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamMask(u8);

impl ParamMask {
    pub const EMPTY: ParamMask = ParamMask(0);
    pub const ALL: ParamMask = ParamMask(0b1_1111);
    /// Scalar or per-column magnitudes: `alpha`, `beta`, `mags`.
    pub const MAGNITUDES: ParamMask = ParamMask(0b1_1100);
    /// The low-rank factors `a` and `b`.
    pub const DIRECTIONS: ParamMask = ParamMask(0b0_0011);

    fn bit(role: ParamRole) -> u8 {
        1 << ParamRole::ALL
            .iter()
            .position(|&r| r == role)
            .expect("role listed in ALL")
    }

    pub fn of(roles: &[ParamRole]) -> ParamMask {
        ParamMask(roles.iter().fold(0, |acc, &r| acc | Self::bit(r)))
    }

    pub fn contains(self, role: ParamRole) -> bool {
        self.0 & Self::bit(role) != 0
    }

    pub fn intersect(self, other: ParamMask) -> ParamMask {
        ParamMask(self.0 & other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn roles(self) -> Vec<ParamRole> {
        ParamRole::ALL.iter().copied().filter(|&r| self.contains(r)).collect()
    }
}

impl fmt::Debug for ParamMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.roles().iter().map(|r| r.name()).collect();
        write!(f, "{{{}}}", names.join(","))
    }
}

/// How trainable groups share the optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptMode {
    Joint,
    /// Alternates every `period` steps, magnitudes first then directions.
    Stepwise {
        period: usize,
    },
}

impl OptMode {
    pub fn phase_mask(self, step: usize) -> ParamMask {
        match self {
            OptMode::Joint => ParamMask::ALL,
            OptMode::Stepwise { period } => {
                if (step / period).is_multiple_of(2) {
                    ParamMask::MAGNITUDES
                } else {
                    ParamMask::DIRECTIONS
                }
            }
        }
    }

    fn phases(self) -> &'static [ParamMask] {
        match self {
            OptMode::Joint => &[ParamMask::ALL],
            OptMode::Stepwise { .. } => &[ParamMask::MAGNITUDES, ParamMask::DIRECTIONS],
        }
    }
}

/// One optimizer step as logged. `alpha`/`beta` are those of the first MAP
/// layer before the update; `step_ms` is only filled when timing is on.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub step_ms: Option<f64>,
}

/// Everything a training run carries between steps. Batches are drawn from
/// a per-epoch permutation derived from `shuffle_seed`, so resuming only
/// needs `step`, the dropout RNG state and the optimizer.
#[derive(Debug, Clone)]
pub struct PhaseState {
    pub opt: OptimizerState,
    pub schedule: Schedule,
    pub mode: OptMode,
    /// Roles allowed to move at all; intersected with the phase mask.
    pub mask: ParamMask,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub dropout_rng: Rng,
    pub step: usize,
    pub record_time: bool,
    perm: Option<(usize, Vec<usize>)>,
}

impl PhaseState {
    pub fn new(
        opt: OptimizerState,
        schedule: Schedule,
        mode: OptMode,
        batch_size: usize,
        shuffle_seed: u64,
        dropout_rng: Rng,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let OptMode::Stepwise { period: 0 } = mode {
            return Err(Error::Config("stepwise period must be positive".into()));
        }
        Ok(Self {
            opt,
            schedule,
            mode,
            mask: ParamMask::ALL,
            batch_size,
            shuffle_seed,
            dropout_rng,
            step: 0,
            record_time: false,
            perm: None,
        })
    }

    /// Number of batches per pass over `n` samples.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    /// Checks that every phase of the mode trains something on `model`.
    pub fn validate(&self, model: &Model) -> Result<()> {
        let present = model
            .adapters()
            .fold(ParamMask::EMPTY, |acc, a| ParamMask(acc.0 | ParamMask::of(a.roles()).0));
        for &phase in self.mode.phases() {
            if self.mask.intersect(phase).intersect(present).is_empty() {
                return Err(Error::Config(format!(
                    "phase {phase:?} with mask {:?} leaves nothing to train (model has {present:?})",
                    self.mask
                )));
            }
        }
        Ok(())
    }

    fn batch_indices(&mut self, n: usize) -> Vec<usize> {
        let per_epoch = self.steps_per_epoch(n);
        let epoch = self.step / per_epoch;
        if self.perm.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut idx: Vec<usize> = (0..n).collect();
            Rng::stream(self.shuffle_seed, SHUFFLE_TAG.wrapping_add(epoch as u64)).shuffle(&mut idx);
            self.perm = Some((epoch, idx));
        }
        let perm = &self.perm.as_ref().expect("set above").1;
        let start = (self.step % per_epoch) * self.batch_size;
        perm[start..(start + self.batch_size).min(n)].to_vec()
    }
}

fn param_norms(model: &Model) -> String {
    let mut parts = Vec::new();
    for (i, a) in model.adapters().enumerate() {
        for &role in a.roles() {
            let (_, v) = a.param(role).expect("role present");
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            parts.push(format!("layer{i}.{}={norm:e}", role.name()));
        }
    }
    parts.join(" ")
}

/// Runs `steps` optimizer steps on `train`, continuing from `state.step`.
pub fn run_phase(model: &mut Model, train: &Split, state: &mut PhaseState, steps: usize) -> Result<Vec<StepRow>> {
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    state.validate(model)?;
    let mut rows = Vec::with_capacity(steps);
    for _ in 0..steps {
        let start = state.record_time.then(Instant::now);
        let step = state.step;
        let lr = state.schedule.lr(step)?;
        let idx = state.batch_indices(train.len());
        let batch = train.select(&idx);
        let non_finite = |model: &Model| Error::NonFiniteLoss {
            step,
            lr,
            param_norms: param_norms(model),
        };
        let (loss, grads) = match loss_and_grad(model, &batch, Some(&mut state.dropout_rng)) {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => return Err(non_finite(model)),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(non_finite(model));
        }
        let map = model.adapters().find_map(|a| a.map_params().copied());

        let active = state.mask.intersect(state.mode.phase_mask(step));
        let mut slots = Vec::new();
        for (adapter, bundle) in model.adapters_mut().zip(&grads.adapters) {
            for (role, values) in adapter.params_mut() {
                slots.push(ParamSlot {
                    role,
                    values,
                    grads: bundle.get(role).expect("gradient for every present role"),
                    trainable: active.contains(role),
                });
            }
        }
        state.opt.step(lr, &mut slots)?;
        state.step += 1;

        rows.push(StepRow {
            step,
            lr,
            loss,
            alpha: map.map(|p| p.alpha),
            beta: map.map(|p| p.beta),
            step_ms: start.map(|t| t.elapsed().as_secs_f64() * 1e3),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::{init_adapter, AdapterKind, FrozenBase, InitOptions};
    use crate::linalg::gaussian_init;
    use crate::optim::{Hyper, OptimizerKind};
    use crate::tasks::{gen_teacher_student, TeacherStudentSpec};

    fn toy(kind: AdapterKind, seed: u64) -> (Model, Split) {
        let spec = TeacherStudentSpec {
            n: 6,
            m: 4,
            r: 2,
            a_star: 2.0,
            b_star: 1.0,
            samples: 40,
            noise_std: 0.0,
        };
        let mut rng = Rng::new(seed);
        let (data, _) = gen_teacher_student(&mut rng, &spec).unwrap();
        let base = FrozenBase::new(gaussian_init(&mut rng, 6, 4, 0.4)).unwrap();
        let opts = InitOptions {
            rank: 2,
            ..InitOptions::default()
        };
        let adapter = init_adapter(kind, &mut rng, base, &opts).unwrap();
        (Model::single(adapter), data.train)
    }

    fn state(mode: OptMode, total: usize, lr: f64, batch: usize) -> PhaseState {
        let opt = OptimizerState::new(OptimizerKind::AdamW, Hyper::default()).unwrap();
        let schedule = Schedule::new(0, total, lr).unwrap();
        PhaseState::new(opt, schedule, mode, batch, 3, Rng::new(5)).unwrap()
    }

    #[test]
    fn masks() {
        assert!(ParamMask::MAGNITUDES.contains(ParamRole::Mags));
        assert!(!ParamMask::MAGNITUDES.contains(ParamRole::FactorA));
        assert_eq!(ParamMask::MAGNITUDES.intersect(ParamMask::DIRECTIONS), ParamMask::EMPTY);
        assert_eq!(
            ParamMask::of(&[ParamRole::Alpha, ParamRole::Beta]).roles(),
            [ParamRole::Alpha, ParamRole::Beta]
        );
        assert_eq!(format!("{:?}", ParamMask::DIRECTIONS), "{a,b}");
    }

    #[test]
    fn stepwise_switches_groups_on_period_boundaries() {
        let mode = OptMode::Stepwise { period: 3 };
        let phases: Vec<ParamMask> = (0..8).map(|s| mode.phase_mask(s)).collect();
        assert_eq!(phases[..3], [ParamMask::MAGNITUDES; 3]);
        assert_eq!(phases[3..6], [ParamMask::DIRECTIONS; 3]);
        assert_eq!(phases[6], ParamMask::MAGNITUDES);
    }

    #[test]
    fn stepwise_moves_only_the_active_group() {
        let (mut model, train) = toy(AdapterKind::Map, 1);
        let mut st = state(OptMode::Stepwise { period: 2 }, 10, 1e-2, 8);
        let snapshot = |m: &Model| {
            let a = m.adapters().next().unwrap();
            (
                a.factors.a.clone(),
                a.factors.b.clone(),
                a.map_params().copied().unwrap(),
            )
        };
        let s0 = snapshot(&model);
        run_phase(&mut model, &train, &mut st, 2).unwrap();
        let s1 = snapshot(&model);
        assert_eq!((&s0.0, &s0.1), (&s1.0, &s1.1));
        assert_ne!(s0.2, s1.2);
        run_phase(&mut model, &train, &mut st, 2).unwrap();
        let s2 = snapshot(&model);
        assert_eq!(s1.2, s2.2);
        assert_ne!(s1.1, s2.1);
    }

    #[test]
    fn frozen_roles_stay_bit_identical() {
        let (mut model, train) = toy(AdapterKind::Map, 2);
        let mut st = state(OptMode::Joint, 20, 1e-2, 8);
        st.mask = ParamMask::of(&[ParamRole::Alpha, ParamRole::Beta]);
        let before = model.adapters().next().unwrap().factors.clone();
        run_phase(&mut model, &train, &mut st, 20).unwrap();
        assert_eq!(model.adapters().next().unwrap().factors, before);
    }

    #[test]
    fn empty_phase_is_a_config_error() {
        let (mut model, train) = toy(AdapterKind::PlainLora, 3);
        let mut st = state(OptMode::Stepwise { period: 1 }, 5, 1e-2, 8);
        assert!(matches!(
            run_phase(&mut model, &train, &mut st, 1),
            Err(Error::Config(_))
        ));
        let mut st = state(OptMode::Joint, 5, 1e-2, 8);
        st.mask = ParamMask::of(&[ParamRole::Beta]);
        assert!(matches!(
            run_phase(&mut model, &train, &mut st, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn joint_and_stepwise_both_decrease_full_batch_loss() {
        for mode in [OptMode::Joint, OptMode::Stepwise { period: 1 }] {
            let (mut model, train) = toy(AdapterKind::Map, 4);
            let mut st = state(mode, 10, 5e-3, train.len());
            st.schedule = Schedule::new(0, 20, 5e-3).unwrap();
            let rows = run_phase(&mut model, &train, &mut st, 10).unwrap();
            for w in rows.windows(2) {
                assert!(w[1].loss < w[0].loss, "{mode:?}: {} -> {}", w[0].loss, w[1].loss);
            }
        }
    }

    #[test]
    fn split_runs_match_one_run() {
        let (mut m1, train) = toy(AdapterKind::Dora, 5);
        let mut m2 = m1.clone();
        let mut s1 = state(OptMode::Joint, 30, 1e-2, 7);
        let mut s2 = s1.clone();
        let r1 = run_phase(&mut m1, &train, &mut s1, 30).unwrap();
        let mut r2 = run_phase(&mut m2, &train, &mut s2, 13).unwrap();
        // a fresh state mirrors a resumed run: no cached permutation
        let mut s3 = PhaseState { perm: None, ..s2 };
        r2.extend(run_phase(&mut m2, &train, &mut s3, 17).unwrap());
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn batches_cover_each_epoch_once() {
        let mut st = state(OptMode::Joint, 100, 1e-2, 4);
        let mut seen = Vec::new();
        for _ in 0..st.steps_per_epoch(10) {
            seen.extend(st.batch_indices(10));
            st.step += 1;
        }
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn timing_only_when_requested() {
        let (mut model, train) = toy(AdapterKind::PlainLora, 6);
        let mut st = state(OptMode::Joint, 4, 1e-2, 8);
        assert!(run_phase(&mut model, &train, &mut st, 2).unwrap()[0].step_ms.is_none());
        st.record_time = true;
        assert!(run_phase(&mut model, &train, &mut st, 2).unwrap()[0].step_ms.is_some());
    }
}
