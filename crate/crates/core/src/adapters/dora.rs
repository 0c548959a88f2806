//! DoRA: column-wise normalization of `V = W + s·AB` followed by a learned
//! per-column magnitude.
//!
//! With `k_j = mags_j / ‖v_j‖`, the forward pass is `y = x·V·diag(k)`.
//! The backward pass keeps the dependence of `‖v_j‖` on `A` and `B`:
//!
//! ```text
//! d_mags_j = ⟨G_j, v̂_j⟩
//! dV_j     = k_j·(G_j − ⟨G_j, v̂_j⟩·v̂_j)
//! dA = s·dV·Bᵀ,  dB = s·Aᵀ·dV
//! ```
//!
//! where `G = xᵀ·g_y`. With branch dropout, `G` splits into a base part
//! `xᵀ·g_y` and a branch part `x̃ᵀ·g_y`; the code handles the general case.

use super::{
    check_grad, check_input, AdapterKind, AdapterState, BranchInput, DoraParams, GradBundle, KindGrads, EPS_NORM,
};
use crate::error::{Error, Result};
use crate::linalg::{col_norms, Matrix, Rng};

#[derive(Debug, Clone)]
pub struct DoraCache {
    x: Matrix,
    branch: BranchInput,
    v: Matrix,
    norms: Vec<f64>,
    k: Vec<f64>,
    w_eff: Matrix,
}

impl DoraCache {
    pub fn column_norms(&self) -> &[f64] {
        &self.norms
    }
}

fn dora_params(state: &AdapterState) -> Result<&DoraParams> {
    state.dora_params().ok_or(Error::KindMismatch {
        expected: AdapterKind::Dora,
        found: state.kind(),
    })
}

/// `V = W + s·AB` with its column norms, rejecting any column at or below
/// the clamp.
fn directions(state: &AdapterState) -> Result<(Matrix, Vec<f64>)> {
    let f = &state.factors;
    let mut v = state.base().w().clone();
    v.axpy(f.scaling, &f.a.matmul(&f.b)?)?;
    let norms = col_norms(&v);
    if let Some((column, &norm)) = norms.iter().enumerate().find(|(_, &n)| !(n > EPS_NORM)) {
        return Err(Error::ZeroColumn { column, norm });
    }
    Ok((v, norms))
}

pub(crate) fn forward(x: &Matrix, state: &AdapterState, rng: Option<&mut Rng>) -> Result<(Matrix, DoraCache)> {
    let mags = &dora_params(state)?.mags;
    check_input(x, state, "dora_forward")?;
    let (v, norms) = directions(state)?;
    let k: Vec<f64> = mags.iter().zip(&norms).map(|(m, n)| m / n).collect();
    let w_eff = v.scale_columns(&k)?;

    let branch = BranchInput::draw(x, state.dropout_p(), rng)?;
    let y = if branch.is_active() {
        let f = &state.factors;
        let mut pre = x.matmul(state.base().w())?;
        pre.axpy(f.scaling, &branch.input(x).matmul(&f.a)?.matmul(&f.b)?)?;
        pre.scale_columns(&k)?
    } else {
        x.matmul(&w_eff)?
    };
    y.ensure_finite("dora_forward")?;

    Ok((
        y,
        DoraCache {
            x: x.clone(),
            branch,
            v,
            norms,
            k,
            w_eff,
        },
    ))
}

/// Returns `(dV, d_mags)`, where `dV` is the gradient w.r.t. the
/// unnormalized directions `V = W + s·AB` (so `dA = s·dV·Bᵀ`).
fn direction_grads(g_y: &Matrix, cache: &DoraCache, state: &AdapterState) -> Result<(Matrix, Vec<f64>)> {
    let mags = &dora_params(state)?.mags;
    let (n, m) = state.base().shape();
    let g_base = cache.x.t_matmul(g_y)?;
    // h_j = ∂L/∂k_j = ⟨G_j, w_j⟩ + s·⟨G̃_j, Δ_j⟩; equals ⟨G_j, v_j⟩ without dropout
    let (g_branch, h) = if cache.branch.is_active() {
        let f = &state.factors;
        let g_tilde = cache.branch.input(&cache.x).t_matmul(g_y)?;
        let delta = f.a.matmul(&f.b)?;
        let w = state.base().w();
        let mut h = vec![0.0; m];
        for i in 0..n {
            for (j, hj) in h.iter_mut().enumerate() {
                *hj += g_base.get(i, j) * w.get(i, j) + f.scaling * g_tilde.get(i, j) * delta.get(i, j);
            }
        }
        (g_tilde, h)
    } else {
        let mut h = vec![0.0; m];
        for i in 0..n {
            for (j, hj) in h.iter_mut().enumerate() {
                *hj += g_base.get(i, j) * cache.v.get(i, j);
            }
        }
        (g_base, h)
    };

    let d_mags: Vec<f64> = h.iter().zip(&cache.norms).map(|(h, n)| h / n).collect();
    // dV_j = k_j·G̃_j − (h_j·mags_j/‖v_j‖³)·v_j
    let radial: Vec<f64> = (0..m)
        .map(|j| h[j] * mags[j] / (cache.norms[j] * cache.norms[j] * cache.norms[j]))
        .collect();
    let d_v = Matrix::from_fn(n, m, |i, j| {
        cache.k[j] * g_branch.get(i, j) - radial[j] * cache.v.get(i, j)
    });
    Ok((d_v, d_mags))
}

pub(crate) fn backward(g_y: &Matrix, cache: &DoraCache, state: &AdapterState) -> Result<GradBundle> {
    dora_params(state)?;
    check_grad(g_y, &cache.x, state, "dora_backward")?;
    let f = &state.factors;
    let s = f.scaling;
    let (d_v, d_mags) = direction_grads(g_y, cache, state)?;
    let d_a = d_v.matmul_t(&f.b)?.scale(s);
    let d_b = f.a.t_matmul(&d_v)?.scale(s);

    let d_x = if cache.branch.is_active() {
        let gk = g_y.scale_columns(&cache.k)?;
        let mut d_x = gk.matmul_t(state.base().w())?;
        let branch = cache.branch.pull_back(gk.matmul_t(&f.b)?.matmul_t(&f.a)?)?;
        d_x.axpy(s, &branch)?;
        d_x
    } else {
        g_y.matmul_t(&cache.w_eff)?
    };

    Ok(GradBundle {
        d_a,
        d_b,
        extra: KindGrads::Dora { d_mags },
        d_x,
    })
}

/// Gradient w.r.t. `V = W + s·AB`. Each column is orthogonal to `v̂_j`
/// when dropout is off.
pub fn dora_v_grad(g_y: &Matrix, cache: &DoraCache, state: &AdapterState) -> Result<Matrix> {
    check_grad(g_y, &cache.x, state, "dora_v_grad")?;
    Ok(direction_grads(g_y, cache, state)?.0)
}

/// `V` with every column scaled to unit norm (before the magnitudes).
pub fn dora_direction(state: &AdapterState) -> Result<Matrix> {
    dora_params(state)?;
    let (v, norms) = directions(state)?;
    let inv: Vec<f64> = norms.iter().map(|n| 1.0 / n).collect();
    v.scale_columns(&inv)
}

pub fn dora_materialize(state: &AdapterState) -> Result<Matrix> {
    let mags = &dora_params(state)?.mags;
    let (v, norms) = directions(state)?;
    let k: Vec<f64> = mags.iter().zip(&norms).map(|(m, n)| m / n).collect();
    v.scale_columns(&k)
}
