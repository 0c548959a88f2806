use crate::adapters::{init_adapter, AdapterKind, AdapterState, ForwardCache, FrozenBase, GradBundle, InitOptions};
use crate::error::{Error, Result};
use crate::linalg::{kaiming_init, Matrix, Rng};

use super::data::{Split, Targets};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Mean of squared errors over every output entry.
    Mse,
    /// Mean negative log-softmax of the true class.
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Adapter(AdapterState),
    Tanh,
}

/// A stack of adapted linear layers and `tanh` nonlinearities with a loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<Layer>,
    loss: LossKind,
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
enum LayerCache {
    Adapter(ForwardCache),
    Tanh(Matrix),
}

/// Gradients for every adapter layer (in layer order, `tanh` layers
/// skipped) plus the gradient w.r.t. the model input.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub adapters: Vec<GradBundle>,
    pub d_x: Matrix,
}

impl Model {
    pub fn new(layers: Vec<Layer>, loss: LossKind) -> Result<Self> {
        let mut width: Option<usize> = None;
        for layer in &layers {
            if let Layer::Adapter(a) = layer {
                if let Some(w) = width {
                    if w != a.in_dim() {
                        return Err(Error::Dimension {
                            op: "Model::new",
                            left: (1, w),
                            right: (a.in_dim(), a.out_dim()),
                        });
                    }
                }
                width = Some(a.out_dim());
            }
        }
        if width.is_none() {
            return Err(Error::Config("model has no adapter layers".into()));
        }
        Ok(Self { layers, loss })
    }

    /// One adapted layer with a squared-error loss.
    pub fn single(adapter: AdapterState) -> Self {
        Self {
            layers: vec![Layer::Adapter(adapter)],
            loss: LossKind::Mse,
        }
    }

    /// `dims[0] → dims[1] → … ` with `tanh` between adapted layers. Frozen
    /// bases are Kaiming-normal draws from `rng`, followed by that layer's
    /// adapter initialization.
    pub fn mlp(kind: AdapterKind, rng: &mut Rng, dims: &[usize], opts: &InitOptions, loss: LossKind) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("an MLP needs at least two widths".into()));
        }
        let mut layers = Vec::new();
        for (i, pair) in dims.windows(2).enumerate() {
            if i > 0 {
                layers.push(Layer::Tanh);
            }
            let base = FrozenBase::new(kaiming_init(rng, pair[0], pair[1]))?;
            layers.push(Layer::Adapter(init_adapter(kind, rng, base, opts)?));
        }
        Self::new(layers, loss)
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.adapters().next().map_or(0, |a| a.in_dim())
    }

    pub fn adapters(&self) -> impl Iterator<Item = &AdapterState> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Adapter(a) => Some(a),
            Layer::Tanh => None,
        })
    }

    pub fn adapters_mut(&mut self) -> impl Iterator<Item = &mut AdapterState> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Adapter(a) => Some(a),
            Layer::Tanh => None,
        })
    }

    pub fn trainable_count(&self) -> usize {
        self.adapters().map(AdapterState::trainable_count).sum()
    }

    fn forward_cached(&self, x: &Matrix, mut rng: Option<&mut Rng>) -> Result<(Matrix, Vec<LayerCache>)> {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            match layer {
                Layer::Adapter(a) => {
                    let (y, cache) = a.forward(&h, rng.as_deref_mut())?;
                    caches.push(LayerCache::Adapter(cache));
                    h = y;
                }
                Layer::Tanh => {
                    h = h.map(f64::tanh);
                    caches.push(LayerCache::Tanh(h.clone()));
                }
            }
        }
        Ok((h, caches))
    }

    /// Evaluation-mode output (no dropout).
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(x, None)?.0)
    }

    /// Evaluation-mode loss on a whole split.
    pub fn loss(&self, data: &Split) -> Result<f64> {
        let out = self.predict(&data.x)?;
        Ok(loss_value(self.loss, &out, &data.targets)?.0)
    }

    /// Fraction of argmax predictions equal to the label; `None` for
    /// regression targets.
    pub fn accuracy(&self, data: &Split) -> Result<Option<f64>> {
        let Targets::Labels(labels) = &data.targets else {
            return Ok(None);
        };
        let out = self.predict(&data.x)?;
        let hits = labels
            .iter()
            .enumerate()
            .filter(|&(i, &l)| argmax(out.row(i)) == l)
            .count();
        Ok(Some(hits as f64 / labels.len().max(1) as f64))
    }
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &v)| if v > best.1 { (i, v) } else { best },
        )
        .0
}

/// Loss value and its gradient w.r.t. the model output.
fn loss_value(kind: LossKind, out: &Matrix, targets: &Targets) -> Result<(f64, Matrix)> {
    match (kind, targets) {
        (LossKind::Mse, Targets::Regression(t)) => {
            if t.shape() != out.shape() {
                return Err(Error::Dimension {
                    op: "mse",
                    left: out.shape(),
                    right: t.shape(),
                });
            }
            let diff = out.sub(t)?;
            let count = diff.len() as f64;
            let loss = crate::linalg::dot(diff.as_slice(), diff.as_slice()) / count;
            Ok((loss, diff.scale(2.0 / count)))
        }
        (LossKind::CrossEntropy, Targets::Labels(labels)) => {
            if labels.len() != out.rows() {
                return Err(Error::Dimension {
                    op: "cross_entropy",
                    left: out.shape(),
                    right: (labels.len(), 1),
                });
            }
            let k = out.cols();
            let batch = out.rows() as f64;
            let mut grad = Matrix::zeros(out.rows(), k);
            let mut total = 0.0;
            for (i, &label) in labels.iter().enumerate() {
                if label >= k {
                    return Err(Error::Config(format!("label {label} out of range for {k} classes")));
                }
                let row = out.row(i);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                let lse = max + sum.ln();
                total += lse - row[label];
                for (j, &v) in row.iter().enumerate() {
                    let p = (v - lse).exp();
                    let onehot = if j == label { 1.0 } else { 0.0 };
                    grad.set(i, j, (p - onehot) / batch);
                }
            }
            Ok((total / batch, grad))
        }
        _ => Err(Error::Config("loss kind does not match target type".into())),
    }
}

/// Loss on `batch` and exact gradients for every adapter layer.
///
/// With `rng` given, adapters run in training mode (branch dropout).
pub fn loss_and_grad(model: &Model, batch: &Split, rng: Option<&mut Rng>) -> Result<(f64, ModelGrads)> {
    if batch.x.cols() != model.in_dim() {
        return Err(Error::Dimension {
            op: "loss_and_grad",
            left: batch.x.shape(),
            right: (batch.x.rows(), model.in_dim()),
        });
    }
    let (out, caches) = model.forward_cached(&batch.x, rng)?;
    let (loss, mut g) = loss_value(model.loss, &out, &batch.targets)?;

    let mut bundles = Vec::new();
    for (layer, cache) in model.layers.iter().zip(&caches).rev() {
        match (layer, cache) {
            (Layer::Adapter(a), LayerCache::Adapter(c)) => {
                let bundle = a.backward(&g, c)?;
                g = bundle.d_x.clone();
                bundles.push(bundle);
            }
            (Layer::Tanh, LayerCache::Tanh(t)) => {
                g = g.hadamard(&t.map(|v| 1.0 - v * v))?;
            }
            _ => unreachable!("cache order mirrors layer order"),
        }
    }
    bundles.reverse();
    Ok((
        loss,
        ModelGrads {
            adapters: bundles,
            d_x: g,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian_init;

    fn mlp(kind: AdapterKind, seed: u64) -> Model {
        let opts = InitOptions {
            rank: 2,
            lora_alpha: 4.0,
            ..InitOptions::default()
        };
        let mut rng = Rng::new(seed);
        let mut model = Model::mlp(kind, &mut rng, &[6, 5, 3], &opts, LossKind::Mse).unwrap();
        for a in model.adapters_mut() {
            let (r, m) = a.factors.b.shape();
            a.factors.b = gaussian_init(&mut rng, r, m, 0.5);
        }
        model
    }

    #[test]
    fn perfect_prediction_has_zero_mse_and_gradient() {
        let model = mlp(AdapterKind::Map, 1);
        let x = gaussian_init(&mut Rng::new(2), 4, 6, 1.0);
        let y = model.predict(&x).unwrap();
        let batch = Split {
            x,
            targets: Targets::Regression(y),
        };
        let (loss, grads) = loss_and_grad(&model, &batch, None).unwrap();
        assert_eq!(loss, 0.0);
        for g in &grads.adapters {
            assert_eq!(g.d_a.max_abs(), 0.0);
            assert_eq!(g.d_b.max_abs(), 0.0);
        }
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let out = Matrix::zeros(3, 5);
        let (loss, _) = loss_value(LossKind::CrossEntropy, &out, &Targets::Labels(vec![0, 3, 4])).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn mismatched_loss_and_target_is_rejected() {
        let out = Matrix::zeros(2, 2);
        assert!(loss_value(LossKind::Mse, &out, &Targets::Labels(vec![0, 1])).is_err());
    }

    #[test]
    fn model_rejects_broken_chain() {
        let a = mlp(AdapterKind::PlainLora, 1);
        let first = a.adapters().next().unwrap().clone();
        assert!(Model::new(
            vec![Layer::Adapter(first.clone()), Layer::Tanh, Layer::Adapter(first)],
            LossKind::Mse
        )
        .is_err());
    }

    #[test]
    fn full_model_matches_finite_differences() {
        const H: f64 = 1e-6;
        for kind in AdapterKind::ALL {
            for loss in [LossKind::Mse, LossKind::CrossEntropy] {
                let mut model = mlp(kind, 3);
                model.loss = loss;
                let x = gaussian_init(&mut Rng::new(4), 4, 6, 1.0);
                let targets = match loss {
                    LossKind::Mse => Targets::Regression(gaussian_init(&mut Rng::new(5), 4, 3, 1.0)),
                    LossKind::CrossEntropy => Targets::Labels(vec![0, 2, 1, 2]),
                };
                let batch = Split { x, targets };
                let (_, grads) = loss_and_grad(&model, &batch, None).unwrap();
                let f = |m: &Model| m.loss(&batch).unwrap();
                for (li, bundle) in grads.adapters.iter().enumerate() {
                    let roles = model.adapters().nth(li).unwrap().roles();
                    for &role in roles {
                        let analytic = bundle.get(role).unwrap();
                        for (i, &a) in analytic.iter().enumerate() {
                            let mut p = model.clone();
                            p.adapters_mut().nth(li).unwrap().param_mut(role).unwrap()[i] += H;
                            let mut q = model.clone();
                            q.adapters_mut().nth(li).unwrap().param_mut(role).unwrap()[i] -= H;
                            let num = (f(&p) - f(&q)) / (2.0 * H);
                            let err = (a - num).abs() / a.abs().max(num.abs()).max(1e-3);
                            assert!(err < 1e-5, "{kind} {loss:?} layer {li} {role:?}[{i}]: {a} vs {num}");
                        }
                    }
                }
            }
        }
    }
}
