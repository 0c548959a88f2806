//! Adapted linear layers.
//!
//! A layer holds a frozen base `W` (`n x m`), low-rank factors `A` (`n x r`)
//! and `B` (`r x m`), and whatever extra parameters its rule needs. Inputs
//! are row batches: `y = x·W_eff` with `x` of shape `batch x n`.
//!
//! | kind  | effective weight                          | extra params |
//! |-------|-------------------------------------------|--------------|
//! | LoRA  | `W + s·AB`                                | none         |
//! | DoRA  | `(W + s·AB)·diag(mags_j / ‖v_j‖)`         | `m` mags     |
//! | MAP   | `α·W/‖W‖_F + β·AB/‖AB‖_F`                 | `α`, `β`     |
//!
//! `s = lora_alpha / r`. MAP ignores `s`: the normalization by `‖AB‖_F`
//! cancels any positive factor on `AB`, so it would change neither the
//! output nor any parameter gradient.
//!
//! Every backward pass is the exact gradient of `Σ⟨g_y, y⟩`, including the
//! flow through `‖AB‖_F` and the DoRA column norms.

mod dora;
mod lora;
mod map;

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{frob_norm, gaussian_init, kaiming_init, lowrank_frob_norm, Matrix, Rng};

pub use dora::{dora_direction, dora_materialize, dora_v_grad, DoraCache};
pub use lora::{lora_materialize, LoraCache};
pub use map::{map_compose, map_delta_grad, map_materialize, MapCache};

/// Clamp for `‖AB‖_F` (MAP) and column norms (DoRA).
pub const EPS_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AdapterKind {
    PlainLora,
    Dora,
    Map,
}

impl AdapterKind {
    pub const ALL: [AdapterKind; 3] = [AdapterKind::PlainLora, AdapterKind::Dora, AdapterKind::Map];

    pub fn name(self) -> &'static str {
        match self {
            AdapterKind::PlainLora => "lora",
            AdapterKind::Dora => "dora",
            AdapterKind::Map => "map",
        }
    }
}

impl fmt::Display for AdapterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Trainable parameter count of one adapted `n x m` matrix at rank `r`.
pub fn param_count(kind: AdapterKind, n: usize, m: usize, r: usize) -> usize {
    let lora = r * (n + m);
    match kind {
        AdapterKind::PlainLora => lora,
        AdapterKind::Dora => lora + m,
        AdapterKind::Map => lora + 2,
    }
}

/// Frozen pre-trained weight with its cached Frobenius norm.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenBase {
    w: Matrix,
    w_fnorm: f64,
}

impl FrozenBase {
    pub fn new(w: Matrix) -> Result<Self> {
        w.ensure_finite("FrozenBase::new")?;
        let w_fnorm = frob_norm(&w);
        if w_fnorm <= 0.0 {
            return Err(Error::ZeroBase);
        }
        Ok(Self { w, w_fnorm })
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn fnorm(&self) -> f64 {
        self.w_fnorm
    }

    pub fn shape(&self) -> (usize, usize) {
        self.w.shape()
    }
}

/// Source of a weight update `ΔW` that MAP can normalize.
///
/// Only the plain low-rank product is implemented here; other
/// factorizations slot in by implementing this trait and calling
/// [`map_compose`].
pub trait DeltaProvider {
    fn shape(&self) -> (usize, usize);
    /// Dense `ΔW`.
    fn delta(&self) -> Result<Matrix>;
    fn delta_frob_norm(&self) -> Result<f64>;
    fn trainable_count(&self) -> usize;
}

/// `A` (`n x r`), `B` (`r x m`) and the LoRA scaling `s = lora_alpha / r`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactors {
    pub a: Matrix,
    pub b: Matrix,
    pub scaling: f64,
}

impl LowRankFactors {
    pub fn new(a: Matrix, b: Matrix, scaling: f64) -> Result<Self> {
        if a.cols() != b.rows() {
            return Err(Error::Dimension {
                op: "LowRankFactors::new",
                left: a.shape(),
                right: b.shape(),
            });
        }
        let r = a.cols();
        if r == 0 || r > a.rows().min(b.cols()) {
            return Err(Error::Config(format!(
                "rank {r} must be in 1..=min({}, {})",
                a.rows(),
                b.cols()
            )));
        }
        if !(scaling > 0.0 && scaling.is_finite()) {
            return Err(Error::Config(format!("LoRA scaling must be positive, got {scaling}")));
        }
        Ok(Self { a, b, scaling })
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }
}

impl DeltaProvider for LowRankFactors {
    fn shape(&self) -> (usize, usize) {
        (self.a.rows(), self.b.cols())
    }

    fn delta(&self) -> Result<Matrix> {
        self.a.matmul(&self.b)
    }

    fn delta_frob_norm(&self) -> Result<f64> {
        lowrank_frob_norm(&self.a, &self.b)
    }

    fn trainable_count(&self) -> usize {
        self.a.len() + self.b.len()
    }
}

/// Learnable magnitudes of the normalized base (`alpha`) and the
/// normalized update (`beta`). Unconstrained in sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapParams {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoraParams {
    pub mags: Vec<f64>,
}

/// The kind-specific parameter block. Holding it as an enum means a state
/// can never carry the wrong block for its kind.
#[derive(Debug, Clone, PartialEq)]
pub enum KindParams {
    PlainLora,
    Dora(DoraParams),
    Map(MapParams),
}

impl KindParams {
    pub fn kind(&self) -> AdapterKind {
        match self {
            KindParams::PlainLora => AdapterKind::PlainLora,
            KindParams::Dora(_) => AdapterKind::Dora,
            KindParams::Map(_) => AdapterKind::Map,
        }
    }
}

/// Identifies a trainable tensor inside an adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamRole {
    FactorA,
    FactorB,
    Alpha,
    Beta,
    Mags,
}

impl ParamRole {
    pub const ALL: [ParamRole; 5] = [
        ParamRole::FactorA,
        ParamRole::FactorB,
        ParamRole::Alpha,
        ParamRole::Beta,
        ParamRole::Mags,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamRole::FactorA => "a",
            ParamRole::FactorB => "b",
            ParamRole::Alpha => "alpha",
            ParamRole::Beta => "beta",
            ParamRole::Mags => "mags",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == name)
    }

    /// Low-rank factors receive weight decay; magnitudes never do.
    pub fn decays(self) -> bool {
        matches!(self, ParamRole::FactorA | ParamRole::FactorB)
    }
}

/// Initialization knobs for [`init_adapter`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitOptions {
    pub rank: usize,
    pub lora_alpha: f64,
    pub beta_init: f64,
    pub b_init_std: f64,
    pub dropout_p: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            rank: 8,
            lora_alpha: 16.0,
            beta_init: 1.0,
            b_init_std: 1e-3,
            dropout_p: 0.0,
        }
    }
}

/// One adapted layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterState {
    base: FrozenBase,
    pub factors: LowRankFactors,
    pub params: KindParams,
    dropout_p: f64,
}

impl AdapterState {
    /// Assembles a state from parts, checking every shape.
    pub fn from_parts(base: FrozenBase, factors: LowRankFactors, params: KindParams, dropout_p: f64) -> Result<Self> {
        let (n, m) = base.shape();
        if factors.a.rows() != n || factors.b.cols() != m {
            return Err(Error::Dimension {
                op: "AdapterState::from_parts",
                left: (n, m),
                right: (factors.a.rows(), factors.b.cols()),
            });
        }
        if let KindParams::Dora(d) = &params {
            if d.mags.len() != m {
                return Err(Error::Dimension {
                    op: "AdapterState::from_parts (mags)",
                    left: (1, m),
                    right: (1, d.mags.len()),
                });
            }
        }
        check_dropout(dropout_p)?;
        Ok(Self {
            base,
            factors,
            params,
            dropout_p,
        })
    }

    pub fn kind(&self) -> AdapterKind {
        self.params.kind()
    }

    pub fn base(&self) -> &FrozenBase {
        &self.base
    }

    pub fn in_dim(&self) -> usize {
        self.base.shape().0
    }

    pub fn out_dim(&self) -> usize {
        self.base.shape().1
    }

    pub fn rank(&self) -> usize {
        self.factors.rank()
    }

    pub fn dropout_p(&self) -> f64 {
        self.dropout_p
    }

    pub fn map_params(&self) -> Option<&MapParams> {
        match &self.params {
            KindParams::Map(p) => Some(p),
            _ => None,
        }
    }

    pub fn dora_params(&self) -> Option<&DoraParams> {
        match &self.params {
            KindParams::Dora(p) => Some(p),
            _ => None,
        }
    }

    pub fn trainable_count(&self) -> usize {
        let extra = match &self.params {
            KindParams::PlainLora => 0,
            KindParams::Dora(d) => d.mags.len(),
            KindParams::Map(_) => 2,
        };
        self.factors.trainable_count() + extra
    }

    /// Roles present in this state, in optimizer slot order.
    pub fn roles(&self) -> &'static [ParamRole] {
        match self.kind() {
            AdapterKind::PlainLora => &[ParamRole::FactorA, ParamRole::FactorB],
            AdapterKind::Dora => &[ParamRole::FactorA, ParamRole::FactorB, ParamRole::Mags],
            AdapterKind::Map => &[
                ParamRole::FactorA,
                ParamRole::FactorB,
                ParamRole::Alpha,
                ParamRole::Beta,
            ],
        }
    }

    /// Read access to a trainable tensor as `(shape, values)`.
    pub fn param(&self, role: ParamRole) -> Option<((usize, usize), &[f64])> {
        match (role, &self.params) {
            (ParamRole::FactorA, _) => Some((self.factors.a.shape(), self.factors.a.as_slice())),
            (ParamRole::FactorB, _) => Some((self.factors.b.shape(), self.factors.b.as_slice())),
            (ParamRole::Alpha, KindParams::Map(p)) => Some(((1, 1), std::slice::from_ref(&p.alpha))),
            (ParamRole::Beta, KindParams::Map(p)) => Some(((1, 1), std::slice::from_ref(&p.beta))),
            (ParamRole::Mags, KindParams::Dora(d)) => Some(((1, d.mags.len()), d.mags.as_slice())),
            _ => None,
        }
    }

    pub fn param_mut(&mut self, role: ParamRole) -> Option<&mut [f64]> {
        match (role, &mut self.params) {
            (ParamRole::FactorA, _) => Some(self.factors.a.as_mut_slice()),
            (ParamRole::FactorB, _) => Some(self.factors.b.as_mut_slice()),
            (ParamRole::Alpha, KindParams::Map(p)) => Some(std::slice::from_mut(&mut p.alpha)),
            (ParamRole::Beta, KindParams::Map(p)) => Some(std::slice::from_mut(&mut p.beta)),
            (ParamRole::Mags, KindParams::Dora(d)) => Some(d.mags.as_mut_slice()),
            _ => None,
        }
    }

    /// Every trainable tensor at once, in [`AdapterState::roles`] order.
    pub fn params_mut(&mut self) -> Vec<(ParamRole, &mut [f64])> {
        let mut out: Vec<(ParamRole, &mut [f64])> = vec![
            (ParamRole::FactorA, self.factors.a.as_mut_slice()),
            (ParamRole::FactorB, self.factors.b.as_mut_slice()),
        ];
        match &mut self.params {
            KindParams::PlainLora => {}
            KindParams::Dora(d) => out.push((ParamRole::Mags, d.mags.as_mut_slice())),
            KindParams::Map(p) => {
                out.push((ParamRole::Alpha, std::slice::from_mut(&mut p.alpha)));
                out.push((ParamRole::Beta, std::slice::from_mut(&mut p.beta)));
            }
        }
        out
    }

    /// Forward pass. Passing an RNG turns on training-mode dropout on the
    /// low-rank branch input (when `dropout_p > 0`); `None` is evaluation.
    pub fn forward(&self, x: &Matrix, rng: Option<&mut Rng>) -> Result<(Matrix, ForwardCache)> {
        match self.kind() {
            AdapterKind::PlainLora => lora::forward(x, self, rng).map(|(y, c)| (y, ForwardCache::Lora(c))),
            AdapterKind::Dora => dora::forward(x, self, rng).map(|(y, c)| (y, ForwardCache::Dora(c))),
            AdapterKind::Map => map::forward(x, self, rng).map(|(y, c)| (y, ForwardCache::Map(c))),
        }
    }

    pub fn backward(&self, g_y: &Matrix, cache: &ForwardCache) -> Result<GradBundle> {
        match cache {
            ForwardCache::Lora(c) => lora::backward(g_y, c, self),
            ForwardCache::Dora(c) => dora::backward(g_y, c, self),
            ForwardCache::Map(c) => map::backward(g_y, c, self),
        }
    }

    /// Dense effective weight: `forward(x) == x·merge()` in evaluation mode.
    pub fn merge(&self) -> Result<Matrix> {
        match self.kind() {
            AdapterKind::PlainLora => lora_materialize(self),
            AdapterKind::Dora => dora_materialize(self),
            AdapterKind::Map => map_materialize(self),
        }
    }

    fn expect_kind(&self, expected: AdapterKind) -> Result<()> {
        if self.kind() != expected {
            return Err(Error::KindMismatch {
                expected,
                found: self.kind(),
            });
        }
        Ok(())
    }
}

fn check_dropout(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Range {
            what: "dropout_p",
            value: p,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(())
}

/// Builds a freshly initialized adapter.
///
/// `A` is Kaiming-normal. LoRA and DoRA start with `B = 0`, so they
/// reproduce the base mapping. MAP needs `‖AB‖_F > 0`, so its `B` is drawn
/// from `N(0, b_init_std²)`; the update term then has norm `|beta_init|`
/// and the layer reproduces the base exactly only when `beta_init = 0`.
pub fn init_adapter(kind: AdapterKind, rng: &mut Rng, base: FrozenBase, opts: &InitOptions) -> Result<AdapterState> {
    let (n, m) = base.shape();
    let r = opts.rank;
    if r == 0 || r > n.min(m) {
        return Err(Error::Config(format!("rank {r} must be in 1..=min({n}, {m})")));
    }
    if !(opts.lora_alpha > 0.0 && opts.lora_alpha.is_finite()) {
        return Err(Error::Config(format!(
            "lora_alpha must be positive, got {}",
            opts.lora_alpha
        )));
    }
    if !(opts.b_init_std >= 0.0 && opts.b_init_std.is_finite()) {
        return Err(Error::Config(format!(
            "b_init_std must be >= 0, got {}",
            opts.b_init_std
        )));
    }
    if !opts.beta_init.is_finite() {
        return Err(Error::Config("beta_init must be finite".into()));
    }
    check_dropout(opts.dropout_p)?;
    let scaling = opts.lora_alpha / r as f64;

    let factors = match kind {
        AdapterKind::PlainLora | AdapterKind::Dora => {
            let a = kaiming_init(rng, n, r);
            LowRankFactors::new(a, Matrix::zeros(r, m), scaling)?
        }
        AdapterKind::Map => {
            let mut norm = 0.0;
            let mut drawn = None;
            for _attempt in 0..2 {
                let a = kaiming_init(rng, n, r);
                let b = gaussian_init(rng, r, m, opts.b_init_std);
                norm = lowrank_frob_norm(&a, &b)?;
                if norm > EPS_NORM {
                    drawn = Some((a, b));
                    break;
                }
            }
            let (a, b) = drawn.ok_or(Error::DegenerateUpdate { norm })?;
            LowRankFactors::new(a, b, scaling)?
        }
    };

    let params = match kind {
        AdapterKind::PlainLora => KindParams::PlainLora,
        // B = 0, so the column norms of W + s·AB are those of W
        AdapterKind::Dora => KindParams::Dora(DoraParams {
            mags: crate::linalg::col_norms(base.w()),
        }),
        AdapterKind::Map => KindParams::Map(MapParams {
            alpha: base.fnorm(),
            beta: opts.beta_init,
        }),
    };

    AdapterState::from_parts(base, factors, params, opts.dropout_p)
}

/// Gradients of one adapter layer plus the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub d_a: Matrix,
    pub d_b: Matrix,
    pub extra: KindGrads,
    pub d_x: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KindGrads {
    PlainLora,
    Dora { d_mags: Vec<f64> },
    Map { d_alpha: f64, d_beta: f64 },
}

impl GradBundle {
    /// Gradient for `role`, laid out like [`AdapterState::param`].
    pub fn get(&self, role: ParamRole) -> Option<&[f64]> {
        match (role, &self.extra) {
            (ParamRole::FactorA, _) => Some(self.d_a.as_slice()),
            (ParamRole::FactorB, _) => Some(self.d_b.as_slice()),
            (ParamRole::Alpha, KindGrads::Map { d_alpha, .. }) => Some(std::slice::from_ref(d_alpha)),
            (ParamRole::Beta, KindGrads::Map { d_beta, .. }) => Some(std::slice::from_ref(d_beta)),
            (ParamRole::Mags, KindGrads::Dora { d_mags }) => Some(d_mags.as_slice()),
            _ => None,
        }
    }

    pub fn get_mut(&mut self, role: ParamRole) -> Option<&mut [f64]> {
        match (role, &mut self.extra) {
            (ParamRole::FactorA, _) => Some(self.d_a.as_mut_slice()),
            (ParamRole::FactorB, _) => Some(self.d_b.as_mut_slice()),
            (ParamRole::Alpha, KindGrads::Map { d_alpha, .. }) => Some(std::slice::from_mut(d_alpha)),
            (ParamRole::Beta, KindGrads::Map { d_beta, .. }) => Some(std::slice::from_mut(d_beta)),
            (ParamRole::Mags, KindGrads::Dora { d_mags }) => Some(d_mags.as_mut_slice()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum ForwardCache {
    Lora(LoraCache),
    Dora(DoraCache),
    Map(MapCache),
}

/// Input to the low-rank branch, with the dropout mask when one was drawn.
#[derive(Debug, Clone)]
pub(crate) struct BranchInput {
    mask: Option<Matrix>,
    dropped: Option<Matrix>,
}

impl BranchInput {
    /// Inverted dropout: kept entries are scaled by `1/(1-p)`.
    pub(crate) fn draw(x: &Matrix, p: f64, rng: Option<&mut Rng>) -> Result<Self> {
        match rng {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                let mask = Matrix::from_fn(x.rows(), x.cols(), |_, _| if rng.uniform() >= p { keep } else { 0.0 });
                let dropped = x.hadamard(&mask)?;
                Ok(Self {
                    mask: Some(mask),
                    dropped: Some(dropped),
                })
            }
            _ => Ok(Self {
                mask: None,
                dropped: None,
            }),
        }
    }

    pub(crate) fn is_active(&self) -> bool {
        self.mask.is_some()
    }

    pub(crate) fn input<'a>(&'a self, x: &'a Matrix) -> &'a Matrix {
        self.dropped.as_ref().unwrap_or(x)
    }

    /// Pulls a gradient w.r.t. the dropped input back to the raw input.
    pub(crate) fn pull_back(&self, g: Matrix) -> Result<Matrix> {
        match &self.mask {
            Some(mask) => g.hadamard(mask),
            None => Ok(g),
        }
    }
}

pub(crate) fn check_input(x: &Matrix, state: &AdapterState, op: &'static str) -> Result<()> {
    if x.cols() != state.in_dim() {
        return Err(Error::Dimension {
            op,
            left: x.shape(),
            right: state.base.shape(),
        });
    }
    Ok(())
}

pub(crate) fn check_grad(g_y: &Matrix, x: &Matrix, state: &AdapterState, op: &'static str) -> Result<()> {
    if g_y.shape() != (x.rows(), state.out_dim()) {
        return Err(Error::Dimension {
            op,
            left: g_y.shape(),
            right: (x.rows(), state.out_dim()),
        });
    }
    Ok(())
}
