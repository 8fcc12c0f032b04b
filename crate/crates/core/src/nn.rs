//! Feed-forward binary classifier: dense layers with ReLU hidden units and a
//! single sigmoid output, trained with binary cross-entropy and Adam.
//!
//! Parameters live in one flat `f64` vector. Each layer contributes a
//! row-major `(outputs x inputs)` weight block followed by its bias vector,
//! so per-sample gradients are plain rows of a [`Matrix`].
//!
//! Gradients are computed by explicit backpropagation. Two code paths exist:
//! a per-example loop ([`per_sample_gradients`]) and a batched matrix form
//! ([`batch_gradient`]); they are kept separate so each can check the other.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::matrix::Matrix;
use crate::{Error, Result};

/// Predictions are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before taking logs.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Largest double strictly below one.
const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

/// Layer widths and activations of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelArchitecture {
    layer_widths: Vec<usize>,
    activations: Vec<Activation>,
}

impl ModelArchitecture {
    /// `layer_widths` runs from the input width to the output width;
    /// `activations` has one entry per dense layer.
    pub fn new(layer_widths: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::Config(
                "an architecture needs at least an input and an output width".into(),
            ));
        }
        if activations.len() != layer_widths.len() - 1 {
            return Err(Error::Config(format!(
                "{} activations given for {} dense layers",
                activations.len(),
                layer_widths.len() - 1
            )));
        }
        if layer_widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if layer_widths.last() != Some(&1) || activations.last() != Some(&Activation::Sigmoid) {
            return Err(Error::Config(
                "the output layer must have width 1 and a sigmoid activation".into(),
            ));
        }
        Ok(Self {
            layer_widths,
            activations,
        })
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.layer_widths
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    /// Trainable parameters per dense layer (`in * out + out`).
    pub fn layer_param_counts(&self) -> Vec<usize> {
        self.layer_widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .collect()
    }

    fn layer_shapes(&self) -> Vec<LayerShape> {
        self.layer_widths
            .windows(2)
            .zip(&self.activations)
            .map(|(w, &activation)| LayerShape {
                rows: w[1],
                cols: w[0],
                bias_len: w[1],
                activation,
            })
            .collect()
    }
}

impl Default for ModelArchitecture {
    /// 15 inputs, hidden layers of 64 and 32 ReLU units, one sigmoid output.
    fn default() -> Self {
        Self {
            layer_widths: vec![15, 64, 32, 1],
            activations: vec![Activation::Relu, Activation::Relu, Activation::Sigmoid],
        }
    }
}

pub fn param_count(arch: &ModelArchitecture) -> usize {
    arch.layer_param_counts().iter().sum()
}

/// Shape of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    /// Output units (rows of the weight block).
    pub rows: usize,
    /// Input units (columns of the weight block).
    pub cols: usize,
    pub bias_len: usize,
    pub activation: Activation,
}

impl LayerShape {
    #[inline]
    pub fn len(&self) -> usize {
        self.rows * self.cols + self.bias_len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat network weights together with the per-layer layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    weights: Vec<f64>,
    shapes: Vec<LayerShape>,
}

impl ModelParams {
    pub fn zeros(arch: &ModelArchitecture) -> Self {
        Self {
            weights: vec![0.0; param_count(arch)],
            shapes: arch.layer_shapes(),
        }
    }

    pub fn from_vec(arch: &ModelArchitecture, weights: Vec<f64>) -> Result<Self> {
        let expected = param_count(arch);
        if weights.len() != expected {
            return Err(Error::Dimension(format!(
                "{} weights supplied, architecture needs {expected}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("model weights must be finite".into()));
        }
        Ok(Self {
            weights,
            shapes: arch.layer_shapes(),
        })
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    #[inline]
    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn input_width(&self) -> usize {
        self.shapes[0].cols
    }

    /// Rebuilds the architecture this parameter vector belongs to.
    pub fn architecture(&self) -> ModelArchitecture {
        let mut widths = vec![self.shapes[0].cols];
        widths.extend(self.shapes.iter().map(|s| s.rows));
        ModelArchitecture {
            layer_widths: widths,
            activations: self.shapes.iter().map(|s| s.activation).collect(),
        }
    }

    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.shapes == other.shapes
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    /// Same layout, new values. The caller guarantees the length.
    pub(crate) fn with_weights(&self, weights: Vec<f64>) -> Self {
        debug_assert_eq!(weights.len(), self.weights.len());
        Self {
            weights,
            shapes: self.shapes.clone(),
        }
    }

    /// Index of the first bias entry of every layer, for tests and tooling.
    pub fn bias_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut offset = 0;
        self.shapes
            .iter()
            .map(|s| {
                let start = offset + s.rows * s.cols;
                offset += s.len();
                start..offset
            })
            .collect()
    }
}

/// Uniform `±sqrt(6 / fan_in)` weights, zero biases.
pub fn init_model(arch: &ModelArchitecture, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(arch);
    let mut offset = 0;
    for shape in arch.layer_shapes() {
        let limit = (6.0 / shape.cols as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite init bounds");
        for w in &mut params.weights[offset..offset + shape.rows * shape.cols] {
            *w = dist.sample(&mut rng);
        }
        offset += shape.len();
    }
    params
}

/// Reusable per-layer activation and delta buffers for the per-example path.
#[derive(Debug, Clone)]
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    pub fn new(params: &ModelParams) -> Self {
        let mut acts = vec![vec![0.0; params.input_width()]];
        acts.extend(params.shapes.iter().map(|s| vec![0.0; s.rows]));
        let deltas = params.shapes.iter().map(|s| vec![0.0; s.rows]).collect();
        Self { acts, deltas }
    }
}

/// Forward pass for one row; returns the unclamped sigmoid output.
fn forward_row(params: &ModelParams, x: &[f64], ws: &mut Workspace) -> f64 {
    ws.acts[0].copy_from_slice(x);
    let mut offset = 0;
    for (l, shape) in params.shapes.iter().enumerate() {
        let (w, rest) = params.weights[offset..].split_at(shape.rows * shape.cols);
        let b = &rest[..shape.bias_len];
        let (prev, next) = ws.acts.split_at_mut(l + 1);
        let input = &prev[l];
        let out = &mut next[0];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &w[r * shape.cols..(r + 1) * shape.cols];
            let z = b[r] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            *o = shape.activation.apply(z);
        }
        offset += shape.len();
    }
    ws.acts[params.shapes.len()][0]
}

#[inline]
fn clamp_probability(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, ONE_MINUS_ULP)
}

/// Predicted positive-class probability for every row of `features`.
pub fn forward(params: &ModelParams, features: &Matrix) -> Result<Vec<f64>> {
    check_width(params, features)?;
    let mut ws = Workspace::new(params);
    Ok(features
        .iter_rows()
        .map(|x| clamp_probability(forward_row(params, x, &mut ws)))
        .collect())
}

fn check_width(params: &ModelParams, features: &Matrix) -> Result<()> {
    if features.cols() != params.input_width() {
        return Err(Error::Dimension(format!(
            "features have {} columns, network expects {}",
            features.cols(),
            params.input_width()
        )));
    }
    Ok(())
}

#[inline]
fn sample_bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Mean binary cross-entropy.
pub fn bce_loss(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| sample_bce(p, y))
        .sum();
    Ok(total / predictions.len() as f64)
}

/// d(loss)/d(output logit) for the sigmoid + clamped BCE pair. Zero inside
/// the clamp region, where the loss is flat in the logit.
#[inline]
fn output_delta(p: f64, y: f64) -> f64 {
    if (BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
        p - y
    } else {
        0.0
    }
}

/// Gradient of the single-sample loss, written into `grad`. Returns the loss.
pub fn sample_gradient(
    params: &ModelParams,
    x: &[f64],
    y: f64,
    ws: &mut Workspace,
    grad: &mut [f64],
) -> f64 {
    let p = forward_row(params, x, ws);
    let n_layers = params.shapes.len();
    ws.deltas[n_layers - 1][0] = output_delta(p, y);

    let mut offset_end = params.weights.len();
    for l in (0..n_layers).rev() {
        let shape = params.shapes[l];
        let start = offset_end - shape.len();
        let w = &params.weights[start..start + shape.rows * shape.cols];
        let (gw, gb) = grad[start..offset_end].split_at_mut(shape.rows * shape.cols);
        let a_prev = &ws.acts[l];
        let delta = &ws.deltas[l];
        for r in 0..shape.rows {
            let d = delta[r];
            gb[r] = d;
            for (g, a) in gw[r * shape.cols..(r + 1) * shape.cols].iter_mut().zip(a_prev) {
                *g = d * a;
            }
        }
        if l > 0 {
            let act = params.shapes[l - 1].activation;
            let (lower, upper) = ws.deltas.split_at_mut(l);
            let delta = &upper[0];
            let prev_delta = &mut lower[l - 1];
            prev_delta.fill(0.0);
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &w[r * shape.cols..(r + 1) * shape.cols];
                for (pd, wv) in prev_delta.iter_mut().zip(row) {
                    *pd += wv * d;
                }
            }
            for (pd, &a) in prev_delta.iter_mut().zip(&ws.acts[l]) {
                *pd *= act.derivative_from_output(a);
            }
        }
        offset_end = start;
    }
    sample_bce(p, y)
}

/// One gradient row per sample, each the gradient of that sample's loss alone.
pub fn per_sample_gradients(
    params: &ModelParams,
    features: &Matrix,
    labels: &[f64],
) -> Result<Matrix> {
    check_width(params, features)?;
    if labels.len() != features.rows() {
        return Err(Error::Dimension(format!(
            "{} feature rows vs {} labels",
            features.rows(),
            labels.len()
        )));
    }
    let mut grads = Matrix::zeros(features.rows(), params.len());
    let mut ws = Workspace::new(params);
    for (i, (x, &y)) in features.iter_rows().zip(labels).enumerate() {
        sample_gradient(params, x, y, &mut ws, grads.row_mut(i));
    }
    Ok(grads)
}

/// Mean loss and its gradient, computed layer-by-layer over the whole batch.
pub fn batch_gradient(
    params: &ModelParams,
    features: &Matrix,
    labels: &[f64],
) -> Result<(f64, Vec<f64>)> {
    check_width(params, features)?;
    let n = features.rows();
    if labels.len() != n {
        return Err(Error::Dimension(format!(
            "{n} feature rows vs {} labels",
            labels.len()
        )));
    }
    if n == 0 {
        return Err(Error::Dimension("empty batch".into()));
    }

    // activations[l] is n x width_l, row-major
    let mut activations: Vec<Vec<f64>> = vec![features.data().to_vec()];
    let mut offset = 0;
    for shape in &params.shapes {
        let w = &params.weights[offset..offset + shape.rows * shape.cols];
        let b = &params.weights[offset + shape.rows * shape.cols..offset + shape.len()];
        let input = activations.last().expect("input layer present");
        let mut out = vec![0.0; n * shape.rows];
        for s in 0..n {
            let x = &input[s * shape.cols..(s + 1) * shape.cols];
            for r in 0..shape.rows {
                let mut z = b[r];
                for c in 0..shape.cols {
                    z += w[r * shape.cols + c] * x[c];
                }
                out[s * shape.rows + r] = shape.activation.apply(z);
            }
        }
        activations.push(out);
        offset += shape.len();
    }

    let outputs = activations.last().expect("output layer present");
    let loss = bce_loss(outputs, labels)?;
    let scale = 1.0 / n as f64;
    let mut delta: Vec<f64> = outputs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| output_delta(p, y) * scale)
        .collect();

    let mut grad = vec![0.0; params.len()];
    let mut offset_end = params.len();
    for l in (0..params.shapes.len()).rev() {
        let shape = params.shapes[l];
        let start = offset_end - shape.len();
        let w = &params.weights[start..start + shape.rows * shape.cols];
        let a_prev = &activations[l];
        {
            let (gw, gb) = grad[start..offset_end].split_at_mut(shape.rows * shape.cols);
            for s in 0..n {
                for r in 0..shape.rows {
                    let d = delta[s * shape.rows + r];
                    gb[r] += d;
                    for c in 0..shape.cols {
                        gw[r * shape.cols + c] += d * a_prev[s * shape.cols + c];
                    }
                }
            }
        }
        if l > 0 {
            let act = params.shapes[l - 1].activation;
            let mut next = vec![0.0; n * shape.cols];
            for s in 0..n {
                for c in 0..shape.cols {
                    let mut acc = 0.0;
                    for r in 0..shape.rows {
                        acc += w[r * shape.cols + c] * delta[s * shape.rows + r];
                    }
                    next[s * shape.cols + c] =
                        acc * act.derivative_from_output(a_prev[s * shape.cols + c]);
                }
            }
            delta = next;
        }
        offset_end = start;
    }
    Ok((loss, grad))
}

/// Optimizer hyperparameters that define local training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 32,
            local_epochs: 5,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is allowed: it freezes training, which the round tests rely on
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.local_epochs == 0 {
            return Err(Error::Config("local epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Bias-corrected Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
        }
    }

    /// In-place update of `weights` along `-gradient`.
    pub fn apply(&mut self, weights: &mut [f64], gradient: &[f64], lr: f64) -> Result<()> {
        if weights.len() != gradient.len() || weights.len() != self.first_moment.len() {
            return Err(Error::Dimension(format!(
                "adam: {} weights, {} gradient entries, {} moments",
                weights.len(),
                gradient.len(),
                self.first_moment.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((w, &g), m), v) in weights
            .iter_mut()
            .zip(gradient)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + self.eps_hat);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::apply`].
pub fn adam_step(
    params: &ModelParams,
    state: &AdamState,
    gradient: &[f64],
    lr: f64,
) -> Result<(ModelParams, AdamState)> {
    let mut params = params.clone();
    let mut state = state.clone();
    state.apply(&mut params.weights, gradient, lr)?;
    Ok((params, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn default_param_counts() {
        let arch = ModelArchitecture::default();
        assert_eq!(param_count(&arch), 3137);
        assert_eq!(arch.layer_param_counts(), vec![1024, 2080, 33]);
    }

    #[test]
    fn single_dense_layer_count() {
        for n in [1, 7, 15] {
            let arch = ModelArchitecture::new(vec![n, 1], vec![Activation::Sigmoid]).unwrap();
            assert_eq!(param_count(&arch), n + 1);
        }
    }

    #[test]
    fn rejects_bad_architectures() {
        assert!(ModelArchitecture::new(vec![15], vec![]).is_err());
        assert!(ModelArchitecture::new(vec![15, 2], vec![Activation::Sigmoid]).is_err());
        assert!(ModelArchitecture::new(vec![15, 1], vec![Activation::Relu]).is_err());
        assert!(ModelArchitecture::new(vec![15, 4, 1], vec![Activation::Relu]).is_err());
    }

    #[test]
    fn init_is_seeded_with_zero_biases() {
        let arch = ModelArchitecture::default();
        let a = init_model(&arch, 7);
        let b = init_model(&arch, 7);
        let c = init_model(&arch, 8);
        assert_eq!(a, b);
        assert_ne!(a.weights(), c.weights());
        for range in a.bias_ranges() {
            assert!(a.weights()[range].iter().all(|&b| b == 0.0));
        }
        let limit = (6.0f64 / 15.0).sqrt();
        assert!(a.weights()[..960].iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn zero_weights_give_half() {
        let params = ModelParams::zeros(&ModelArchitecture::default());
        let x = random_matrix(6, 15, 1);
        for p in forward(&params, &x).unwrap() {
            assert_eq!(p, 0.5);
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let params = ModelParams::zeros(&ModelArchitecture::default());
        assert!(matches!(
            forward(&params, &Matrix::zeros(2, 14)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn forward_batch_equals_rows() {
        let params = init_model(&ModelArchitecture::default(), 3);
        let x = random_matrix(9, 15, 2);
        let batch = forward(&params, &x).unwrap();
        for (i, row) in x.iter_rows().enumerate() {
            let single = forward(&params, &Matrix::from_rows(&[row]).unwrap()).unwrap();
            assert_eq!(single[0].to_bits(), batch[i].to_bits());
        }
    }

    #[test]
    fn bce_examples() {
        let loss = bce_loss(&[0.5; 4], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        let loss = bce_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(loss < 2e-7);
        let loss = bce_loss(&[0.9, 0.2], &[1.0, 0.0]).unwrap();
        assert!((loss - 0.164252).abs() < 1e-6);
        assert!(bce_loss(&[0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn single_row_gradient_equals_batch_gradient() {
        let params = init_model(&ModelArchitecture::default(), 11);
        let x = random_matrix(1, 15, 5);
        let rows = per_sample_gradients(&params, &x, &[1.0]).unwrap();
        let (_, batch) = batch_gradient(&params, &x, &[1.0]).unwrap();
        for (a, b) in rows.row(0).iter().zip(&batch) {
            assert!((a - b).abs() <= 1e-15 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let params = init_model(&ModelArchitecture::default(), 1);
        let state = AdamState::new(params.len());
        let zero = vec![0.0; params.len()];
        let (next, st) = adam_step(&params, &state, &zero, 0.01).unwrap();
        assert_eq!(next, params);
        assert_eq!(st.step_count, 1);
        assert!(st.first_moment.iter().all(|&m| m == 0.0));

        // with existing moments, a zero gradient only decays them
        let mut warm = state.clone();
        warm.first_moment.fill(0.5);
        warm.second_moment.fill(0.25);
        let (_, st) = adam_step(&params, &warm, &zero, 0.01).unwrap();
        assert!(st.first_moment.iter().all(|&m| (m - 0.45).abs() < 1e-15));
        assert!(st.second_moment.iter().all(|&v| (v - 0.25 * 0.999).abs() < 1e-15));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let arch = ModelArchitecture::new(vec![3, 1], vec![Activation::Sigmoid]).unwrap();
        let params = ModelParams::from_vec(&arch, vec![0.1, -0.2, 0.3, 0.0]).unwrap();
        let grad = [2.0, -0.5, 1e-3, -7.0];
        let (next, _) = adam_step(&params, &AdamState::new(4), &grad, 0.01).unwrap();
        for ((w0, w1), g) in params.weights().iter().zip(next.weights()).zip(grad) {
            let expected = -0.01 * g.signum();
            assert!(((w1 - w0) - expected).abs() < 1e-7, "{w0} -> {w1}");
        }
    }

    #[test]
    fn adam_length_mismatch() {
        let params = init_model(&ModelArchitecture::default(), 1);
        let state = AdamState::new(params.len());
        assert!(adam_step(&params, &state, &[0.0; 3], 0.01).is_err());
    }

    #[test]
    fn training_config_validation() {
        assert!(TrainingConfig::default().validate().is_ok());
        let mut c = TrainingConfig::default();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        c = TrainingConfig::default();
        c.local_epochs = 0;
        assert!(c.validate().is_err());
        c = TrainingConfig::default();
        c.learning_rate = f64::NAN;
        assert!(c.validate().is_err());
    }
}
