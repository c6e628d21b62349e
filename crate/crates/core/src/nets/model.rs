//! Model structure, forward passes with inverted dropout, and analytic
//! gradients.
//!
//! Hidden layers use tanh (smooth everywhere, so finite-difference
//! gradient checks hold at full precision); the output layer is linear
//! logits fed to the softmax.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{streams, RngStream};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Fully-connected classifier: `layer_dims` = [input, hidden.., classes],
/// `weights[l]` maps layer l to layer l+1 (shape dims[l+1] × dims[l]),
/// one dropout rate per hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    pub dropout_rates: Vec<f64>,
    pub seed: u64,
}

impl MlpModel {
    pub fn layer_count(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn hidden_count(&self) -> usize {
        self.layer_dims.len() - 2
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Width of the last hidden layer; `None` for a pure linear model.
    pub fn embedding_dim(&self) -> Option<usize> {
        (self.layer_dims.len() >= 3).then(|| self.layer_dims[self.layer_dims.len() - 2])
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.data.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Check the structural invariants: consistent shape chain, one
    /// dropout rate per hidden layer, rates in [0,1), finite parameters.
    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::InvalidModel("fewer than 2 layer dims".to_string()));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::InvalidModel("zero-width layer".to_string()));
        }
        if self.weights.len() != self.layer_count() || self.biases.len() != self.layer_count() {
            return Err(Error::InvalidModel("parameter count != layer count".to_string()));
        }
        for l in 0..self.layer_count() {
            let (rows, cols) = (self.layer_dims[l + 1], self.layer_dims[l]);
            let w = &self.weights[l];
            if w.rows != rows || w.cols != cols || w.data.len() != rows * cols {
                return Err(Error::InvalidModel(format!(
                    "layer {l}: weight shape {}x{} != {rows}x{cols}",
                    w.rows, w.cols
                )));
            }
            if self.biases[l].len() != rows {
                return Err(Error::InvalidModel(format!("layer {l}: bias length")));
            }
            if w.data.iter().chain(self.biases[l].iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!("layer {l}: non-finite parameter")));
            }
        }
        if self.dropout_rates.len() != self.hidden_count() {
            return Err(Error::InvalidModel(format!(
                "{} dropout rates for {} hidden layers",
                self.dropout_rates.len(),
                self.hidden_count()
            )));
        }
        if self.dropout_rates.iter().any(|&r| !(0.0..1.0).contains(&r)) {
            return Err(Error::InvalidModel("dropout rate outside [0,1)".to_string()));
        }
        Ok(())
    }
}

/// Fresh model with weights ~ N(0, 1/fan_in) and zero biases,
/// deterministic under the seed.
pub fn init_model(layer_dims: &[usize], dropout_rates: &[f64], seed: u64) -> Result<MlpModel> {
    let mut rng = RngStream::new(seed, streams::INIT);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    if layer_dims.len() < 2 {
        return Err(Error::InvalidModel("fewer than 2 layer dims".to_string()));
    }
    for l in 0..layer_dims.len() - 1 {
        let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
        if fan_in == 0 || fan_out == 0 {
            return Err(Error::InvalidModel(format!("layer dim 0 at position {l}")));
        }
        let scale = 1.0 / (fan_in as f64).sqrt();
        let mut w = Matrix::zeros(fan_out, fan_in);
        for v in w.data.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *v = n * scale;
        }
        weights.push(w);
        biases.push(vec![0.0; fan_out]);
    }
    let model = MlpModel {
        layer_dims: layer_dims.to_vec(),
        weights,
        biases,
        dropout_rates: dropout_rates.to_vec(),
        seed,
    };
    model.validate()?;
    Ok(model)
}

/// Everything backprop needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    /// tanh(z) per hidden layer, before the dropout mask.
    pub hidden_pre: Vec<Vec<f64>>,
    /// mask ⊙ tanh(z) per hidden layer; the input to the next layer.
    pub hidden_post: Vec<Vec<f64>>,
    /// Per-unit scale factors: 0 for dropped units, 1/(1−rate) for kept
    /// ones, all 1 in deterministic mode.
    pub mask_scales: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

pub enum ForwardMode<'a> {
    Deterministic,
    Dropout(&'a mut RngStream),
}

fn affine(w: &Matrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(w.rows);
    for (r, &bias) in b.iter().enumerate() {
        let mut acc = bias;
        for (wv, xv) in w.row(r).iter().zip(x) {
            acc += wv * xv;
        }
        out.push(acc);
    }
    out
}

/// One forward pass. Deterministic mode applies no masking; dropout mode
/// keeps each hidden unit with probability 1−rate and rescales kept
/// activations by 1/(1−rate) (inverted dropout), so the deterministic
/// pass is the expectation of the stochastic one.
pub fn forward(model: &MlpModel, x: &[f64], mode: ForwardMode) -> Result<(Vec<f64>, ForwardCache)> {
    let masks: Vec<Vec<f64>> = match mode {
        ForwardMode::Deterministic => model
            .layer_dims[1..model.layer_dims.len() - 1]
            .iter()
            .map(|&d| vec![1.0; d])
            .collect(),
        ForwardMode::Dropout(rng) => model
            .layer_dims[1..model.layer_dims.len() - 1]
            .iter()
            .zip(&model.dropout_rates)
            .map(|(&d, &rate)| {
                (0..d)
                    .map(|_| {
                        if rng.gen::<f64>() >= rate {
                            1.0 / (1.0 - rate)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect(),
    };
    forward_with_masks(model, x, &masks)
}

/// Forward pass with caller-supplied mask scales, one vector per hidden
/// layer. This is the primitive both `forward` modes reduce to, and it
/// lets gradient checks freeze a mask across loss evaluations.
pub fn forward_with_masks(
    model: &MlpModel,
    x: &[f64],
    mask_scales: &[Vec<f64>],
) -> Result<(Vec<f64>, ForwardCache)> {
    if x.len() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: x.len(),
        });
    }
    if mask_scales.len() != model.hidden_count() {
        return Err(Error::DimensionMismatch {
            expected: model.hidden_count(),
            got: mask_scales.len(),
        });
    }
    let mut hidden_pre = Vec::with_capacity(model.hidden_count());
    let mut hidden_post = Vec::with_capacity(model.hidden_count());
    let mut activation: Vec<f64> = x.to_vec();
    for l in 0..model.layer_count() {
        let z = affine(&model.weights[l], &activation, &model.biases[l]);
        if l + 1 == model.layer_count() {
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "logits".to_string(),
                });
            }
            let cache = ForwardCache {
                input: x.to_vec(),
                hidden_pre,
                hidden_post,
                mask_scales: mask_scales.to_vec(),
                logits: z.clone(),
            };
            return Ok((z, cache));
        }
        let mask = &mask_scales[l];
        if mask.len() != z.len() {
            return Err(Error::DimensionMismatch {
                expected: z.len(),
                got: mask.len(),
            });
        }
        let pre: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
        let post: Vec<f64> = pre.iter().zip(mask).map(|(p, m)| p * m).collect();
        if post.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("hidden layer {l}"),
            });
        }
        hidden_pre.push(pre);
        hidden_post.push(post.clone());
        activation = post;
    }
    unreachable!("layer loop always returns at the output layer")
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Gradients {
        Gradients {
            weights: model
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows, w.cols))
                .collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in self.weights.iter_mut() {
            for v in w.data.iter_mut() {
                *v *= factor;
            }
        }
        for b in self.biases.iter_mut() {
            for v in b.iter_mut() {
                *v *= factor;
            }
        }
    }

    /// Add the L2 term λ·W to the weight gradients of the given layers.
    /// Biases are never penalized.
    pub fn add_l2(&mut self, model: &MlpModel, l2_weight: f64, layers: std::ops::Range<usize>) {
        for l in layers {
            for (g, w) in self.weights[l].data.iter_mut().zip(&model.weights[l].data) {
                *g += l2_weight * w;
            }
        }
    }
}

fn check_cache(model: &MlpModel, cache: &ForwardCache) -> Result<()> {
    let ok = cache.input.len() == model.input_dim()
        && cache.logits.len() == model.class_count()
        && cache.hidden_pre.len() == model.hidden_count()
        && cache.hidden_post.len() == model.hidden_count()
        && cache.mask_scales.len() == model.hidden_count()
        && (0..model.hidden_count()).all(|l| {
            let d = model.layer_dims[l + 1];
            cache.hidden_pre[l].len() == d
                && cache.hidden_post[l].len() == d
                && cache.mask_scales[l].len() == d
        });
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidModel(
            "cache shape does not match model".to_string(),
        ))
    }
}

/// Gradient at a hidden layer's pre-activation, given the gradient at its
/// post-dropout output: chain through the mask scale and tanh'.
fn hidden_delta(grad_post: &[f64], pre: &[f64], mask: &[f64]) -> Vec<f64> {
    grad_post
        .iter()
        .zip(pre)
        .zip(mask)
        .map(|((g, p), m)| g * m * (1.0 - p * p))
        .collect()
}

fn propagate_down(
    model: &MlpModel,
    cache: &ForwardCache,
    grads: &mut Gradients,
    top_layer: usize,
    mut delta: Vec<f64>,
) {
    for l in (0..=top_layer).rev() {
        let input_act: &[f64] = if l == 0 {
            &cache.input
        } else {
            &cache.hidden_post[l - 1]
        };
        for (r, &d) in delta.iter().enumerate() {
            for (g, x) in grads.weights[l].row_mut(r).iter_mut().zip(input_act) {
                *g += d * x;
            }
            grads.biases[l][r] += d;
        }
        if l == 0 {
            break;
        }
        let w = &model.weights[l];
        let mut grad_post = vec![0.0; w.cols];
        for (r, &d) in delta.iter().enumerate() {
            for (gp, wv) in grad_post.iter_mut().zip(w.row(r)) {
                *gp += wv * d;
            }
        }
        delta = hidden_delta(&grad_post, &cache.hidden_pre[l - 1], &cache.mask_scales[l - 1]);
    }
}

/// Exact gradients of cross-entropy (+ optional L2 on the weights) with
/// respect to every parameter, respecting the cached dropout masks.
pub fn backward(
    model: &MlpModel,
    cache: &ForwardCache,
    true_label: usize,
    l2_weight: f64,
) -> Result<Gradients> {
    check_cache(model, cache)?;
    if true_label >= model.class_count() {
        return Err(Error::DimensionMismatch {
            expected: model.class_count(),
            got: true_label,
        });
    }
    let mut delta = super::softmax(&cache.logits);
    delta[true_label] -= 1.0;

    let mut grads = Gradients::zeros_like(model);
    propagate_down(model, cache, &mut grads, model.layer_count() - 1, delta);
    if l2_weight != 0.0 {
        grads.add_l2(model, l2_weight, 0..model.layer_count());
    }
    Ok(grads)
}

/// Gradients of a loss expressed through the embedding: backpropagate a
/// given d(loss)/d(embedding) through the hidden stack.
///
/// The classification head above the embedding receives zero gradient
/// and, when L2 is applied, is also excluded from the penalty, so
/// embedding-driven training leaves it exactly at its initial value.
pub fn backward_from_embedding(
    model: &MlpModel,
    cache: &ForwardCache,
    grad_embedding: &[f64],
    l2_weight: f64,
) -> Result<Gradients> {
    check_cache(model, cache)?;
    let hidden = model.hidden_count();
    if hidden == 0 {
        return Err(Error::InvalidModel("no hidden layer".to_string()));
    }
    let top = hidden - 1;
    if grad_embedding.len() != model.layer_dims[hidden] {
        return Err(Error::DimensionMismatch {
            expected: model.layer_dims[hidden],
            got: grad_embedding.len(),
        });
    }
    let delta = hidden_delta(grad_embedding, &cache.hidden_pre[top], &cache.mask_scales[top]);
    let mut grads = Gradients::zeros_like(model);
    propagate_down(model, cache, &mut grads, top, delta);
    if l2_weight != 0.0 {
        grads.add_l2(model, l2_weight, 0..hidden);
    }
    Ok(grads)
}

/// Scalar training loss for one sample under frozen masks:
/// cross-entropy + (λ/2)·Σw². The gradient-check oracle differentiates
/// this numerically.
pub fn sample_loss(
    model: &MlpModel,
    x: &[f64],
    mask_scales: &[Vec<f64>],
    true_label: usize,
    l2_weight: f64,
) -> Result<f64> {
    let (logits, _) = forward_with_masks(model, x, mask_scales)?;
    let probs = super::softmax(&logits);
    let mut loss = super::cross_entropy_loss(&probs, true_label);
    if l2_weight != 0.0 {
        let sq: f64 = model
            .weights
            .iter()
            .flat_map(|w| w.data.iter())
            .map(|v| v * v)
            .sum();
        loss += 0.5 * l2_weight * sq;
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones_masks(model: &MlpModel) -> Vec<Vec<f64>> {
        model.layer_dims[1..model.layer_dims.len() - 1]
            .iter()
            .map(|&d| vec![1.0; d])
            .collect()
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_model(&[4, 8, 2], &[0.25], 7).unwrap();
        let b = init_model(&[4, 8, 2], &[0.25], 7).unwrap();
        assert_eq!(a, b);
        let c = init_model(&[4, 8, 2], &[0.25], 8).unwrap();
        assert_ne!(a.weights, c.weights);
    }

    #[test]
    fn init_scales_by_fan_in() {
        let m = init_model(&[100, 50, 2], &[0.0], 3).unwrap();
        let var: f64 = m.weights[0].data.iter().map(|v| v * v).sum::<f64>()
            / m.weights[0].data.len() as f64;
        assert!((var - 0.01).abs() < 0.004, "observed variance {var}");
        assert!(m.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn init_rejects_bad_shapes() {
        assert!(init_model(&[4], &[], 1).is_err());
        assert!(init_model(&[4, 0, 2], &[0.0], 1).is_err());
        assert!(init_model(&[4, 8, 2], &[], 1).is_err());
        assert!(init_model(&[4, 8, 2], &[1.0], 1).is_err());
    }

    #[test]
    fn linear_model_without_hidden_layer_works() {
        let m = init_model(&[4, 2], &[], 1).unwrap();
        assert_eq!(m.embedding_dim(), None);
        let (logits, _) = forward(&m, &[0.1, 0.2, 0.3, 0.4], ForwardMode::Deterministic).unwrap();
        assert_eq!(logits.len(), 2);
    }

    #[test]
    fn zero_parameters_give_uniform_softmax() {
        let mut m = init_model(&[3, 4, 2], &[0.0], 1).unwrap();
        for w in m.weights.iter_mut() {
            w.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let (logits, _) = forward(&m, &[1.0, -2.0, 3.0], ForwardMode::Deterministic).unwrap();
        assert_eq!(logits, vec![0.0, 0.0]);
        assert_eq!(crate::nets::softmax(&logits), vec![0.5, 0.5]);
    }

    #[test]
    fn zero_rate_dropout_equals_deterministic_bit_exactly() {
        let m = init_model(&[5, 7, 3, 2], &[0.0, 0.0], 11).unwrap();
        let x = [0.3, -0.1, 0.9, 0.0, -0.7];
        let (det, _) = forward(&m, &x, ForwardMode::Deterministic).unwrap();
        let mut rng = RngStream::new(99, 0);
        let (sto, _) = forward(&m, &x, ForwardMode::Dropout(&mut rng)).unwrap();
        assert_eq!(det, sto);
    }

    #[test]
    fn fixed_rng_repeats_identically() {
        let m = init_model(&[5, 16, 2], &[0.5], 11).unwrap();
        let x = [0.3, -0.1, 0.9, 0.0, -0.7];
        let (a, _) = forward(&m, &x, ForwardMode::Dropout(&mut RngStream::new(4, 2))).unwrap();
        let (b, _) = forward(&m, &x, ForwardMode::Dropout(&mut RngStream::new(4, 2))).unwrap();
        assert_eq!(a, b);
        let (c, _) = forward(&m, &x, ForwardMode::Dropout(&mut RngStream::new(5, 2))).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = init_model(&[4, 8, 2], &[0.0], 1).unwrap();
        assert!(forward(&m, &[1.0, 2.0], ForwardMode::Deterministic).is_err());
    }

    #[test]
    fn one_hot_output_gives_zero_output_layer_gradient() {
        let mut m = init_model(&[2, 3, 2], &[0.0], 1).unwrap();
        // Saturate the output layer so softmax is one-hot to machine
        // precision.
        for v in m.weights[1].row_mut(0).iter_mut() {
            *v = 0.0;
        }
        m.biases[1][0] = 60.0;
        m.biases[1][1] = -60.0;
        let (_, cache) = forward(&m, &[0.2, -0.4], ForwardMode::Deterministic).unwrap();
        let grads = backward(&m, &cache, 0, 0.0).unwrap();
        assert!(grads.weights[1].data.iter().all(|g| g.abs() < 1e-9));
        assert!(grads.biases[1].iter().all(|g| g.abs() < 1e-9));
    }

    #[test]
    fn l2_contributes_lambda_w_on_weights_only() {
        let mut m = init_model(&[2, 3, 2], &[0.0], 1).unwrap();
        for v in m.weights[1].row_mut(0).iter_mut() {
            *v = 0.5;
        }
        m.biases[1][0] = 60.0;
        m.biases[1][1] = -60.0;
        let (_, cache) = forward(&m, &[0.2, -0.4], ForwardMode::Deterministic).unwrap();
        let lambda = 0.01;
        let with_l2 = backward(&m, &cache, 0, lambda).unwrap();
        let without = backward(&m, &cache, 0, 0.0).unwrap();
        for l in 0..2 {
            for i in 0..with_l2.weights[l].data.len() {
                let expect = without.weights[l].data[i] + lambda * m.weights[l].data[i];
                assert!((with_l2.weights[l].data[i] - expect).abs() < 1e-15);
            }
            assert_eq!(with_l2.biases[l], without.biases[l]);
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let a = init_model(&[4, 8, 2], &[0.0], 1).unwrap();
        let b = init_model(&[4, 6, 2], &[0.0], 1).unwrap();
        let (_, cache) = forward(&a, &[0.1, 0.2, 0.3, 0.4], ForwardMode::Deterministic).unwrap();
        assert!(backward(&b, &cache, 0, 0.0).is_err());
    }

    #[test]
    fn embedding_backward_leaves_head_untouched() {
        let m = init_model(&[3, 5, 4, 2], &[0.0, 0.0], 5).unwrap();
        let masks = ones_masks(&m);
        let (_, cache) = forward_with_masks(&m, &[0.1, -0.2, 0.5], &masks).unwrap();
        let grads = backward_from_embedding(&m, &cache, &[1.0, -0.5, 0.25, 2.0], 0.01).unwrap();
        let head = m.layer_count() - 1;
        assert!(grads.weights[head].data.iter().all(|&g| g == 0.0));
        assert!(grads.biases[head].iter().all(|&g| g == 0.0));
        assert!(grads.weights[0].data.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn embedding_backward_matches_finite_differences() {
        let m = init_model(&[3, 5, 4, 2], &[0.0, 0.0], 5).unwrap();
        let masks = ones_masks(&m);
        let x = [0.1, -0.2, 0.5];
        let g_emb = [0.7, -0.3, 0.2, 1.1];
        let (_, cache) = forward_with_masks(&m, &x, &masks).unwrap();
        let grads = backward_from_embedding(&m, &cache, &g_emb, 0.0).unwrap();

        // Loss proxy: dot(grad_embedding, embedding(x)).
        let loss = |model: &MlpModel| {
            let (_, c) = forward_with_masks(model, &x, &masks).unwrap();
            c.hidden_post
                .last()
                .unwrap()
                .iter()
                .zip(&g_emb)
                .map(|(e, g)| e * g)
                .sum::<f64>()
        };
        let h = 1e-6;
        for l in 0..2 {
            for idx in 0..m.weights[l].data.len() {
                let mut plus = m.clone();
                plus.weights[l].data[idx] += h;
                let mut minus = m.clone();
                minus.weights[l].data[idx] -= h;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let analytic = grads.weights[l].data[idx];
                assert!(
                    (numeric - analytic).abs() < 1e-6,
                    "layer {l} idx {idx}: {analytic} vs {numeric}"
                );
            }
        }
    }
}
