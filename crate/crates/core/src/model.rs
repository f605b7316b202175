//! Small differentiable classifiers with analytic cross-entropy gradients.
//!
//! Parameters live in one flat vector. Each layer owns a contiguous segment
//! holding its weight matrix (row-major, `fan_out x fan_in`) followed by its
//! bias, so per-layer gradient statistics are plain slices.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "architecture")]
pub enum Architecture {
    LinearSoftmax,
    /// One hidden ReLU layer of width `hidden`.
    Mlp1 { hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layer {
    pub name: &'static str,
    pub fan_in: usize,
    pub fan_out: usize,
    pub range: Range<usize>,
}

impl Layer {
    fn weights(&self) -> Range<usize> {
        self.range.start..self.range.start + self.fan_in * self.fan_out
    }

    fn bias(&self) -> Range<usize> {
        self.range.start + self.fan_in * self.fan_out..self.range.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub architecture: Architecture,
    pub num_classes: usize,
    pub dim: usize,
    params: Vec<f64>,
}

/// Mean loss of a batch plus the per-example values it averages.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub mean: f64,
    pub per_example: Vec<f64>,
}

fn layer_shapes(arch: Architecture, num_classes: usize, dim: usize) -> Vec<(&'static str, usize, usize)> {
    match arch {
        Architecture::LinearSoftmax => vec![("output", dim, num_classes)],
        Architecture::Mlp1 { hidden } => vec![("hidden", dim, hidden), ("output", hidden, num_classes)],
    }
}

fn build_layers(arch: Architecture, num_classes: usize, dim: usize) -> Vec<Layer> {
    let mut offset = 0;
    layer_shapes(arch, num_classes, dim)
        .into_iter()
        .map(|(name, fan_in, fan_out)| {
            let len = fan_in * fan_out + fan_out;
            let layer = Layer {
                name,
                fan_in,
                fan_out,
                range: offset..offset + len,
            };
            offset += len;
            layer
        })
        .collect()
}

/// `out = W x + b` for one layer segment.
fn affine(params: &[f64], layer: &Layer, x: &[f64], out: &mut Vec<f64>) {
    let w = &params[layer.weights()];
    let b = &params[layer.bias()];
    out.clear();
    out.extend(b.iter().enumerate().map(|(r, &bias)| {
        let row = &w[r * layer.fan_in..(r + 1) * layer.fan_in];
        bias + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>()
    }));
}

/// Softmax probabilities and `-ln p[label]` from logits, via log-sum-exp.
fn softmax_xent(logits: &[f64], label: usize) -> (Vec<f64>, f64) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    // rounding can leave a tiny negative value; NaN must survive the clamp
    let raw = max + total.ln() - logits[label];
    let loss = if raw < 0.0 { 0.0 } else { raw };
    (exps.into_iter().map(|e| e / total).collect(), loss)
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

impl Model {
    pub fn num_params_for(arch: Architecture, num_classes: usize, dim: usize) -> usize {
        layer_shapes(arch, num_classes, dim)
            .iter()
            .map(|(_, fan_in, fan_out)| fan_in * fan_out + fan_out)
            .sum()
    }

    /// All-zero parameters; a linear model is then the uniform predictor.
    pub fn zeros(arch: Architecture, num_classes: usize, dim: usize) -> Self {
        Self {
            architecture: arch,
            num_classes,
            dim,
            params: vec![0.0; Self::num_params_for(arch, num_classes, dim)],
        }
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(arch: Architecture, num_classes: usize, dim: usize, seed: u64) -> Self {
        let mut model = Self::zeros(arch, num_classes, dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in model.layers() {
            let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for w in &mut model.params[layer.weights()] {
                *w = rng.random_range(-limit..limit);
            }
        }
        model
    }

    pub fn from_params(arch: Architecture, num_classes: usize, dim: usize, params: Vec<f64>) -> Result<Self> {
        let expected = Self::num_params_for(arch, num_classes, dim);
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "model parameter vector",
                expected,
                actual: params.len(),
            });
        }
        Ok(Self {
            architecture: arch,
            num_classes,
            dim,
            params,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn layers(&self) -> Vec<Layer> {
        build_layers(self.architecture, self.num_classes, self.dim)
    }

    pub fn check_input(&self, ds: &Dataset) -> Result<()> {
        if ds.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "model input vs dataset features",
                expected: self.dim,
                actual: ds.dim(),
            });
        }
        if ds.num_classes() > self.num_classes {
            return Err(Error::DimensionMismatch {
                context: "model outputs vs dataset classes",
                expected: self.num_classes,
                actual: ds.num_classes(),
            });
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let layers = self.layers();
        let mut out = Vec::with_capacity(self.num_classes);
        match self.architecture {
            Architecture::LinearSoftmax => affine(&self.params, &layers[0], x, &mut out),
            Architecture::Mlp1 { .. } => {
                let mut hidden = Vec::new();
                affine(&self.params, &layers[0], x, &mut hidden);
                hidden.iter_mut().for_each(|h| *h = h.max(0.0));
                affine(&self.params, &layers[1], &hidden, &mut out);
            }
        }
        out
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax_xent(&self.logits(x), 0).0
    }

    /// Argmax class; ties go to the lowest class id.
    pub fn predict(&self, x: &[f64]) -> usize {
        let logits = self.logits(x);
        let mut best = 0;
        for (c, &z) in logits.iter().enumerate().skip(1) {
            if z > logits[best] {
                best = c;
            }
        }
        best
    }

    /// Cross-entropy `-ln p(label | x)`.
    pub fn example_loss(&self, x: &[f64], label: usize) -> f64 {
        softmax_xent(&self.logits(x), label).1
    }

    /// Adds `scale * dLoss/dparams` for one example into `grad` and returns
    /// the example's loss.
    pub fn accumulate_gradient(&self, ex: &Example, scale: f64, grad: &mut [f64]) -> f64 {
        let layers = self.layers();
        match self.architecture {
            Architecture::LinearSoftmax => {
                let out = &layers[0];
                let mut logits = Vec::with_capacity(self.num_classes);
                affine(&self.params, out, &ex.features, &mut logits);
                let (mut delta, loss) = softmax_xent(&logits, ex.label);
                delta[ex.label] -= 1.0;
                outer_into(grad, out, &delta, &ex.features, scale);
                loss
            }
            Architecture::Mlp1 { .. } => {
                let (hid, out) = (&layers[0], &layers[1]);
                let mut pre = Vec::new();
                affine(&self.params, hid, &ex.features, &mut pre);
                let act: Vec<f64> = pre.iter().map(|h| h.max(0.0)).collect();
                let mut logits = Vec::with_capacity(self.num_classes);
                affine(&self.params, out, &act, &mut logits);
                let (mut delta, loss) = softmax_xent(&logits, ex.label);
                delta[ex.label] -= 1.0;
                outer_into(grad, out, &delta, &act, scale);

                let w2 = &self.params[out.weights()];
                let back: Vec<f64> = (0..hid.fan_out)
                    .map(|j| {
                        if pre[j] > 0.0 {
                            (0..out.fan_out).map(|k| w2[k * out.fan_in + j] * delta[k]).sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
                outer_into(grad, hid, &back, &ex.features, scale);
                loss
            }
        }
    }

    /// Mean cross-entropy of a non-empty batch and its per-example values.
    pub fn forward_loss<'a>(&self, batch: impl IntoIterator<Item = &'a Example>) -> Result<BatchLoss> {
        let per_example: Vec<f64> = batch
            .into_iter()
            .map(|ex| self.example_loss(&ex.features, ex.label))
            .collect();
        if per_example.is_empty() {
            return Err(Error::param("forward_loss needs a non-empty batch"));
        }
        check_finite(&per_example, "forward loss")?;
        let mean = per_example.iter().sum::<f64>() / per_example.len() as f64;
        Ok(BatchLoss { mean, per_example })
    }

    /// Gradient of the mean batch loss, laid out like [`Model::params`].
    pub fn backward<'a>(&self, batch: impl IntoIterator<Item = &'a Example>) -> Result<Vec<f64>> {
        self.loss_and_gradient(batch).map(|(_, g)| g)
    }

    /// Mean batch loss and its gradient in a single pass.
    pub fn loss_and_gradient<'a>(&self, batch: impl IntoIterator<Item = &'a Example>) -> Result<(f64, Vec<f64>)> {
        let batch: Vec<&Example> = batch.into_iter().collect();
        if batch.is_empty() {
            return Err(Error::param("backward needs a non-empty batch"));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for ex in batch {
            loss += self.accumulate_gradient(ex, scale, &mut grad);
        }
        check_finite(&grad, "gradient")?;
        let loss = loss * scale;
        if !loss.is_finite() {
            return Err(Error::NonFinite("batch loss".into()));
        }
        Ok((loss, grad))
    }
}

/// `grad[layer] += scale * (delta ⊗ input, delta)`.
fn outer_into(grad: &mut [f64], layer: &Layer, delta: &[f64], input: &[f64], scale: f64) {
    let w_start = layer.weights().start;
    for (r, &d) in delta.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let row = &mut grad[w_start + r * layer.fan_in..w_start + (r + 1) * layer.fan_in];
        for (g, &v) in row.iter_mut().zip(input) {
            *g += scale * d * v;
        }
    }
    for (g, &d) in grad[layer.bias()].iter_mut().zip(delta) {
        *g += scale * d;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(id: usize, features: Vec<f64>, label: usize) -> Example {
        Example { id, features, label }
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(Model::num_params_for(Architecture::LinearSoftmax, 5, 16), 85);
        assert_eq!(Model::num_params_for(Architecture::Mlp1 { hidden: 8 }, 5, 16), 16 * 8 + 8 + 8 * 5 + 5);
    }

    #[test]
    fn layers_tile_the_parameter_vector() {
        for arch in [Architecture::LinearSoftmax, Architecture::Mlp1 { hidden: 7 }] {
            let m = Model::zeros(arch, 4, 3);
            let layers = m.layers();
            assert_eq!(layers[0].range.start, 0);
            for pair in layers.windows(2) {
                assert_eq!(pair[0].range.end, pair[1].range.start);
            }
            assert_eq!(layers.last().unwrap().range.end, m.num_params());
        }
    }

    #[test]
    fn zero_linear_model_is_uniform() {
        let m = Model::zeros(Architecture::LinearSoftmax, 5, 3);
        let batch = [ex(0, vec![1.0, 2.0, 3.0], 0), ex(1, vec![-1.0, 0.0, 9.0], 4)];
        let loss = m.forward_loss(&batch).unwrap();
        assert!((loss.mean - 5f64.ln()).abs() < 1e-15);
        assert!(loss.per_example.iter().all(|l| (l - 5f64.ln()).abs() < 1e-15));
    }

    #[test]
    fn confident_prediction_has_zero_loss() {
        // logit gap of 800 drives p(true) to 1 in double precision
        let m = Model::from_params(Architecture::LinearSoftmax, 2, 1, vec![400.0, -400.0, 0.0, 0.0]).unwrap();
        let l = m.forward_loss(&[ex(0, vec![1.0], 0)]).unwrap();
        assert_eq!(l.mean, 0.0);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let m = Model::init(Architecture::Mlp1 { hidden: 6 }, 4, 3, 9);
        let p = m.probabilities(&[3.0, -2.0, 0.5]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn duplicated_examples_share_loss_and_mean_gradient() {
        let m = Model::init(Architecture::Mlp1 { hidden: 5 }, 3, 2, 1);
        let batch = vec![ex(0, vec![0.3, -1.2], 2), ex(1, vec![1.0, 0.4], 0)];
        let doubled: Vec<Example> = batch.iter().chain(batch.iter()).cloned().collect();
        let l = m.forward_loss(&doubled).unwrap();
        assert_eq!(l.per_example[0], l.per_example[2]);
        let g1 = m.backward(&batch).unwrap();
        let g2 = m.backward(&doubled).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn predict_breaks_ties_low() {
        let m = Model::zeros(Architecture::LinearSoftmax, 3, 2);
        assert_eq!(m.predict(&[1.0, 1.0]), 0);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let m = Model::zeros(Architecture::LinearSoftmax, 2, 1);
        let empty: Vec<Example> = Vec::new();
        assert!(m.forward_loss(&empty).is_err());
        assert!(m.backward(&empty).is_err());
    }

    #[test]
    fn non_finite_inputs_are_reported() {
        let m = Model::init(Architecture::LinearSoftmax, 2, 1, 0);
        let err = m.backward(&[ex(0, vec![f64::NAN], 0)]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = Model::init(Architecture::Mlp1 { hidden: 4 }, 3, 5, 2);
        let b = Model::init(Architecture::Mlp1 { hidden: 4 }, 3, 5, 2);
        assert_eq!(a, b);
        let layers = a.layers();
        let limit = (6.0f64 / 9.0).sqrt();
        assert!(a.params()[layers[0].weights()].iter().all(|w| w.abs() <= limit));
        assert!(a.params()[layers[0].bias()].iter().all(|&w| w == 0.0));
    }
}
