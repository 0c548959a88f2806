//! MAP: the frozen weight and the low-rank update are each normalized by
//! their Frobenius norm and re-weighted by learnable scalars,
//!
//! ```text
//! W* = α·W/‖W‖_F + β·U,   U = AB / ‖AB‖_F
//! ```
//!
//! Flattening a matrix to a vector turns `‖·‖_F` into the ℓ2 norm, so this
//! is the vector rule `w' = α·ŵ + β·Δŵ` applied to `vec(W)` and `vec(AB)`.
//!
//! Backward, with `G = xᵀ·g_y` and `c = ‖AB‖_F`:
//!
//! ```text
//! dα = ⟨g_y, x·W⟩ / ‖W‖_F
//! dβ = ⟨G, U⟩
//! dΔ = (β/c)·(G − ⟨G, U⟩·U)        (tangent to the unit sphere at U)
//! dA = dΔ·Bᵀ,  dB = Aᵀ·dΔ
//! ```
//!
//! The kernel never forms `G` or `AB`: `⟨G, U⟩ = ⟨x·A, g_y·Bᵀ⟩ / c`,
//! `U·Bᵀ = A·(BBᵀ)/c` and `Aᵀ·U = (AᵀA)·B/c`, so every term is
//! `O(batch·r·(n+m) + r²·(n+m))` on top of the dense `x·W` products that
//! plain LoRA pays as well.

use super::{
    check_grad, check_input, AdapterKind, AdapterState, BranchInput, DeltaProvider, FrozenBase, GradBundle, KindGrads,
    MapParams, EPS_NORM,
};
use crate::error::{Error, Result};
use crate::linalg::{dot, lowrank_frob_norm, Matrix, Rng};

#[derive(Debug, Clone)]
pub struct MapCache {
    x: Matrix,
    branch: BranchInput,
    xa: Matrix,
    xw: Matrix,
    c_delta: f64,
    clamped: bool,
}

impl MapCache {
    /// `max(‖AB‖_F, EPS_NORM)` as used by the forward pass.
    pub fn update_norm(&self) -> f64 {
        self.c_delta
    }

    /// True if `‖AB‖_F` was at or below the clamp during forward.
    pub fn clamped(&self) -> bool {
        self.clamped
    }
}

fn map_params(state: &AdapterState) -> Result<MapParams> {
    state.map_params().copied().ok_or(Error::KindMismatch {
        expected: AdapterKind::Map,
        found: state.kind(),
    })
}

pub(crate) fn forward(x: &Matrix, state: &AdapterState, rng: Option<&mut Rng>) -> Result<(Matrix, MapCache)> {
    let p = map_params(state)?;
    check_input(x, state, "map_forward")?;
    let f = &state.factors;
    let base = state.base();

    let raw = lowrank_frob_norm(&f.a, &f.b)?;
    let clamped = raw <= EPS_NORM;
    if clamped {
        log::warn!("MAP update norm {raw:e} clamped to {EPS_NORM:e}");
    }
    let c_delta = raw.max(EPS_NORM);

    let branch = BranchInput::draw(x, state.dropout_p(), rng)?;
    let xa = branch.input(x).matmul(&f.a)?;
    let xw = x.matmul(base.w())?;
    let mut y = xw.scale(p.alpha / base.fnorm());
    y.axpy(p.beta / c_delta, &xa.matmul(&f.b)?)?;
    y.ensure_finite("map_forward")?;

    Ok((
        y,
        MapCache {
            x: x.clone(),
            branch,
            xa,
            xw,
            c_delta,
            clamped,
        },
    ))
}

pub(crate) fn backward(g_y: &Matrix, cache: &MapCache, state: &AdapterState) -> Result<GradBundle> {
    let p = map_params(state)?;
    check_grad(g_y, &cache.x, state, "map_backward")?;
    if cache.clamped {
        return Err(Error::NormUnderflow {
            norm: cache.c_delta,
            eps: EPS_NORM,
        });
    }
    let f = &state.factors;
    let base = state.base();
    let c = cache.c_delta;
    let x_in = cache.branch.input(&cache.x);

    let d_alpha = dot(g_y.as_slice(), cache.xw.as_slice()) / base.fnorm();
    let g_bt = g_y.matmul_t(&f.b)?; // batch x r
    let d_beta = dot(cache.xa.as_slice(), g_bt.as_slice()) / c;

    let coef = p.beta / c;
    let radial = d_beta / c;

    // dA = coef·(x̃ᵀ·g·Bᵀ − ⟨G,U⟩·A·BBᵀ/c)
    let mut d_a = x_in.t_matmul(&g_bt)?;
    d_a.axpy(-radial, &f.a.matmul(&f.b.matmul_t(&f.b)?)?)?;
    d_a.scale_in_place(coef);

    // dB = coef·((x̃A)ᵀ·g − ⟨G,U⟩·AᵀA·B/c)
    let mut d_b = cache.xa.t_matmul(g_y)?;
    d_b.axpy(-radial, &f.a.t_matmul(&f.a)?.matmul(&f.b)?)?;
    d_b.scale_in_place(coef);

    let mut d_x = g_y.matmul_t(base.w())?;
    d_x.scale_in_place(p.alpha / base.fnorm());
    let branch = cache.branch.pull_back(g_bt.matmul_t(&f.a)?)?;
    d_x.axpy(coef, &branch)?;

    Ok(GradBundle {
        d_a,
        d_b,
        extra: KindGrads::Map { d_alpha, d_beta },
        d_x,
    })
}

/// Dense gradient with respect to `Δ = AB` (the quantity that `dA` and
/// `dB` are chained from). Forms `G` and `U` explicitly; meant for
/// diagnostics and for checking the factored kernel.
pub fn map_delta_grad(g_y: &Matrix, cache: &MapCache, state: &AdapterState) -> Result<Matrix> {
    let p = map_params(state)?;
    check_grad(g_y, &cache.x, state, "map_delta_grad")?;
    if cache.clamped {
        return Err(Error::NormUnderflow {
            norm: cache.c_delta,
            eps: EPS_NORM,
        });
    }
    let c = cache.c_delta;
    let g = cache.branch.input(&cache.x).t_matmul(g_y)?;
    let u = state.factors.delta()?.scale(1.0 / c);
    let along = dot(g.as_slice(), u.as_slice());
    let mut d = g;
    d.axpy(-along, &u)?;
    d.scale_in_place(p.beta / c);
    Ok(d)
}

/// `α·W/‖W‖_F + β·ΔW/‖ΔW‖_F` for any update provider.
pub fn map_compose<P: DeltaProvider + ?Sized>(base: &FrozenBase, provider: &P, params: &MapParams) -> Result<Matrix> {
    if provider.shape() != base.shape() {
        return Err(Error::Dimension {
            op: "map_compose",
            left: base.shape(),
            right: provider.shape(),
        });
    }
    let c = provider.delta_frob_norm()?.max(EPS_NORM);
    let mut w = base.w().scale(params.alpha / base.fnorm());
    w.axpy(params.beta / c, &provider.delta()?)?;
    Ok(w)
}

pub fn map_materialize(state: &AdapterState) -> Result<Matrix> {
    let p = map_params(state)?;
    map_compose(state.base(), &state.factors, &p)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::super::{KindParams, LowRankFactors, ParamRole};
    use super::*;
    use crate::linalg::{frob_inner, frob_norm};

    fn hand_state() -> AdapterState {
        let base = FrozenBase::new(Matrix::from_rows(&[[3.0], [4.0]])).unwrap();
        let factors =
            LowRankFactors::new(Matrix::from_rows(&[[0.0], [1.0]]), Matrix::from_rows(&[[2.0]]), 1.0).unwrap();
        let params = KindParams::Map(MapParams { alpha: 5.0, beta: 1.0 });
        AdapterState::from_parts(base, factors, params, 0.0).unwrap()
    }

    #[test]
    fn hand_computed_forward() {
        let (y, _) = forward(&Matrix::identity(2), &hand_state(), None).unwrap();
        assert_eq!(y, Matrix::from_rows(&[[3.0], [5.0]]));
    }

    #[test]
    fn positive_rescaling_of_b_is_invisible() {
        let st = random_state(AdapterKind::Map, 2, 7, 5, 2);
        let mut scaled = st.clone();
        scaled.factors.b.scale_in_place(10.0);
        let x = random_matrix(3, 4, 7);
        let (y1, _) = forward(&x, &st, None).unwrap();
        let (y2, _) = forward(&x, &scaled, None).unwrap();
        assert!(max_rel_diff(&y1, &y2) <= 1e-12);
    }

    #[test]
    fn materialize_matches_forward() {
        for seed in 0..4 {
            let st = random_state(AdapterKind::Map, seed, 9, 6, 3);
            let x = random_matrix(seed + 40, 5, 9);
            let (y, _) = forward(&x, &st, None).unwrap();
            let via = x.matmul(&map_materialize(&st).unwrap()).unwrap();
            assert!(max_rel_diff(&y, &via) <= 1e-12);
        }
    }

    #[test]
    fn beta_zero_with_alpha_at_norm_is_the_base() {
        let mut st = random_state(AdapterKind::Map, 5, 6, 4, 2);
        st.params = KindParams::Map(MapParams {
            alpha: st.base().fnorm(),
            beta: 0.0,
        });
        assert_eq!(map_materialize(&st).unwrap(), *st.base().w());
    }

    #[test]
    fn parallel_upstream_is_annihilated() {
        // x = I so that G = g_y; choose g_y = U.
        let st = random_state(AdapterKind::Map, 6, 5, 5, 2);
        let u = st.factors.delta().unwrap();
        let u = u.scale(1.0 / frob_norm(&u));
        let x = Matrix::identity(5);
        let (_, cache) = forward(&x, &st, None).unwrap();
        let grads = backward(&u, &cache, &st).unwrap();
        match grads.extra {
            KindGrads::Map { d_beta, .. } => assert!((d_beta - 1.0).abs() < 1e-12),
            _ => unreachable!(),
        }
        let d_delta = map_delta_grad(&u, &cache, &st).unwrap();
        assert!(d_delta.max_abs() < 1e-12);
        assert!(grads.d_a.max_abs() < 1e-12 && grads.d_b.max_abs() < 1e-12);
    }

    #[test]
    fn delta_grad_is_tangent_and_chains_to_factors() {
        for seed in 0..5 {
            let st = random_state(AdapterKind::Map, seed, 8, 6, 2);
            let x = random_matrix(seed + 7, 4, 8);
            let g = random_matrix(seed + 8, 4, 6);
            let (_, cache) = forward(&x, &st, None).unwrap();
            let d_delta = map_delta_grad(&g, &cache, &st).unwrap();
            let u = st.factors.delta().unwrap().scale(1.0 / cache.update_norm());
            assert!(frob_inner(&d_delta, &u).unwrap().abs() <= 1e-12);
            let grads = backward(&g, &cache, &st).unwrap();
            let d_a = d_delta.matmul_t(&st.factors.b).unwrap();
            let d_b = st.factors.a.t_matmul(&d_delta).unwrap();
            assert!(max_rel_diff(&d_a, &grads.d_a) <= 1e-10);
            assert!(max_rel_diff(&d_b, &grads.d_b) <= 1e-10);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let st = random_state(AdapterKind::Map, seed, 8, 6, 2);
            let x = random_matrix(seed + 60, 4, 8);
            let g = random_matrix(seed + 70, 4, 6);
            let (_, cache) = forward(&x, &st, None).unwrap();
            let grads = backward(&g, &cache, &st).unwrap();
            for role in [
                ParamRole::FactorA,
                ParamRole::FactorB,
                ParamRole::Alpha,
                ParamRole::Beta,
            ] {
                let err = check_role(&st, &x, &g, role, grads.get(role).unwrap());
                assert!(err < 1e-5, "seed {seed} {role:?}: {err}");
            }
            assert!(check_x(&st, &x, &g, &grads.d_x) < 1e-5);
            let dense = g.matmul_t(&map_materialize(&st).unwrap()).unwrap();
            assert!(max_rel_diff(&dense, &grads.d_x) <= 1e-12);
        }
    }

    #[test]
    fn lora_scaling_never_enters() {
        let st = random_state(AdapterKind::Map, 9, 8, 6, 2);
        let mut other = st.clone();
        other.factors.scaling = 123.0;
        let x = random_matrix(1, 4, 8);
        let g = random_matrix(2, 4, 6);
        let (y1, c1) = forward(&x, &st, None).unwrap();
        let (y2, c2) = forward(&x, &other, None).unwrap();
        assert_eq!(y1, y2);
        assert_eq!(backward(&g, &c1, &st).unwrap(), backward(&g, &c2, &other).unwrap());
    }

    #[test]
    fn clamped_norm_is_an_error_in_backward() {
        let mut st = random_state(AdapterKind::Map, 1, 5, 4, 2);
        st.factors.b = Matrix::zeros(2, 4);
        let x = random_matrix(3, 2, 5);
        let (y, cache) = forward(&x, &st, None).unwrap();
        assert!(y.is_finite());
        assert!(cache.clamped());
        assert!(matches!(
            backward(&Matrix::zeros(2, 4), &cache, &st),
            Err(Error::NormUnderflow { .. })
        ));
    }
}
