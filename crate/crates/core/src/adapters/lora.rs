//! Plain LoRA: `y = x·W + s·(x·A)·B`.

use super::{check_grad, check_input, AdapterKind, AdapterState, BranchInput, GradBundle, KindGrads};
use crate::error::Result;
use crate::linalg::{Matrix, Rng};

#[derive(Debug, Clone)]
pub struct LoraCache {
    x: Matrix,
    branch: BranchInput,
    xa: Matrix,
}

pub(crate) fn forward(x: &Matrix, state: &AdapterState, rng: Option<&mut Rng>) -> Result<(Matrix, LoraCache)> {
    state.expect_kind(AdapterKind::PlainLora)?;
    check_input(x, state, "lora_forward")?;
    let f = &state.factors;
    let branch = BranchInput::draw(x, state.dropout_p(), rng)?;
    let xa = branch.input(x).matmul(&f.a)?;
    let mut y = x.matmul(state.base().w())?;
    y.axpy(f.scaling, &xa.matmul(&f.b)?)?;
    y.ensure_finite("lora_forward")?;
    Ok((
        y,
        LoraCache {
            x: x.clone(),
            branch,
            xa,
        },
    ))
}

pub(crate) fn backward(g_y: &Matrix, cache: &LoraCache, state: &AdapterState) -> Result<GradBundle> {
    state.expect_kind(AdapterKind::PlainLora)?;
    check_grad(g_y, &cache.x, state, "lora_backward")?;
    let f = &state.factors;
    let s = f.scaling;
    let x_in = cache.branch.input(&cache.x);

    let g_bt = g_y.matmul_t(&f.b)?; // batch x r
    let d_a = x_in.t_matmul(&g_bt)?.scale(s);
    let d_b = cache.xa.t_matmul(g_y)?.scale(s);

    let mut d_x = g_y.matmul_t(state.base().w())?;
    let branch = cache.branch.pull_back(g_bt.matmul_t(&f.a)?)?;
    d_x.axpy(s, &branch)?;

    Ok(GradBundle {
        d_a,
        d_b,
        extra: KindGrads::PlainLora,
        d_x,
    })
}

/// `W + s·AB`.
pub fn lora_materialize(state: &AdapterState) -> Result<Matrix> {
    state.expect_kind(AdapterKind::PlainLora)?;
    let f = &state.factors;
    let mut w = state.base().w().clone();
    w.axpy(f.scaling, &f.a.matmul(&f.b)?)?;
    Ok(w)
}
