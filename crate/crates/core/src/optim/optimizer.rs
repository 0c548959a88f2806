use crate::adapters::ParamRole;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    AdamW,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// One trainable tensor handed to the optimizer for a single step.
#[derive(Debug)]
pub struct ParamSlot<'a> {
    pub role: ParamRole,
    pub values: &'a mut [f64],
    pub grads: &'a [f64],
    /// Masked-out slots are left bit-identical and their moments untouched.
    pub trainable: bool,
}

/// AdamW moments of one slot. `updates` counts the steps this slot
/// actually took, which is what its bias correction uses; a slot that
/// sat out half of a stepwise schedule is not over-corrected.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub updates: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    hyper: Hyper,
    step_count: u64,
    moments: Vec<Moments>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, hyper: Hyper) -> Result<Self> {
        let Hyper {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = hyper;
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::Config(format!(
                "Adam betas must be in [0, 1), got {beta1}, {beta2}"
            )));
        }
        if !(eps > 0.0) || !(weight_decay >= 0.0) {
            return Err(Error::Config("eps must be > 0 and weight_decay >= 0".into()));
        }
        Ok(Self {
            kind,
            hyper,
            step_count: 0,
            moments: Vec::new(),
        })
    }

    /// Rebuilds a saved state (checkpoint restore).
    pub fn restore(kind: OptimizerKind, hyper: Hyper, step_count: u64, moments: Vec<Moments>) -> Result<Self> {
        let mut st = Self::new(kind, hyper)?;
        if kind == OptimizerKind::Sgd && !moments.is_empty() {
            return Err(Error::Config("SGD carries no moment buffers".into()));
        }
        st.step_count = step_count;
        st.moments = moments;
        Ok(st)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn moments(&self) -> &[Moments] {
        &self.moments
    }

    /// Applies one update in place. Slot `i` is matched with moment buffer
    /// `i`, so callers must present slots in the same order every step.
    ///
    /// Weight decay is decoupled (`p -= lr·wd·p`) and only touches roles
    /// for which [`ParamRole::decays`] is true.
    pub fn step(&mut self, lr: f64, slots: &mut [ParamSlot<'_>]) -> Result<()> {
        for slot in slots.iter() {
            if slot.values.len() != slot.grads.len() {
                return Err(Error::Dimension {
                    op: "optimizer step",
                    left: (slot.values.len(), 1),
                    right: (slot.grads.len(), 1),
                });
            }
        }
        if self.kind == OptimizerKind::AdamW {
            if self.moments.is_empty() {
                self.moments = slots
                    .iter()
                    .map(|s| Moments {
                        m: vec![0.0; s.values.len()],
                        v: vec![0.0; s.values.len()],
                        updates: 0,
                    })
                    .collect();
            }
            if self.moments.len() != slots.len()
                || self
                    .moments
                    .iter()
                    .zip(slots.iter())
                    .any(|(mo, s)| mo.m.len() != s.values.len())
            {
                return Err(Error::Dimension {
                    op: "adamw moments",
                    left: (self.moments.len(), 1),
                    right: (slots.len(), 1),
                });
            }
        }

        let h = self.hyper;
        for (i, slot) in slots.iter_mut().enumerate() {
            if !slot.trainable {
                continue;
            }
            let decay = if slot.role.decays() { lr * h.weight_decay } else { 0.0 };
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, &g) in slot.values.iter_mut().zip(slot.grads) {
                        *p -= decay * *p + lr * g;
                    }
                }
                OptimizerKind::AdamW => {
                    let mo = &mut self.moments[i];
                    mo.updates += 1;
                    let t = mo.updates as i32;
                    let c1 = 1.0 - h.beta1.powi(t);
                    let c2 = 1.0 - h.beta2.powi(t);
                    for ((p, &g), (m, v)) in slot
                        .values
                        .iter_mut()
                        .zip(slot.grads)
                        .zip(mo.m.iter_mut().zip(mo.v.iter_mut()))
                    {
                        *p -= decay * *p;
                        *m = h.beta1 * *m + (1.0 - h.beta1) * g;
                        *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + h.eps);
                    }
                }
            }
        }
        self.step_count += 1;
        Ok(())
    }
}
