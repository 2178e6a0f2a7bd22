//! Dense multilayer perceptrons with hand-written reverse-mode gradients.
//!
//! Hidden layers use `tanh`, the output layer is linear. Weight matrices are stored
//! row-major with one row per output unit.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnetError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid layer sizes")]
    InvalidLayers,
    #[error("non-finite parameter")]
    NonFinite,
}

fn check_len(expected: usize, found: usize) -> Result<(), NnetError> {
    if expected == found {
        Ok(())
    } else {
        Err(NnetError::ShapeMismatch { expected, found })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

/// Weights and biases of a multilayer perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    /// Per layer, `out x in` row-major.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

/// Activations recorded by [`MlpParams::forward`]; `layers[0]` is the input and
/// `layers[l]` the output of layer `l` (post-activation for hidden layers).
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    layers: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn input(&self) -> &[f64] {
        &self.layers[0]
    }

    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("cache holds at least the input")
    }
}

/// Gradients shaped like [`MlpParams`], plus the gradient with respect to the input.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            weights: params.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            input: vec![0.0; params.input_width()],
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.params_mut().zip(other.params()) {
            *a += *b;
        }
        for (a, b) in self.input.iter_mut().zip(&other.input) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for a in self.params_mut() {
            *a *= k;
        }
        for a in &mut self.input {
            *a *= k;
        }
    }

    /// Parameter gradients in the same flat order as [`MlpParams::values`].
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn squared_norm(&self) -> f64 {
        self.params().map(|g| g * g).sum()
    }
}

impl MlpParams {
    /// All-zero network.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self, NnetError> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(NnetError::InvalidLayers);
        }
        let weights = layer_sizes
            .windows(2)
            .map(|w| vec![0.0; w[0] * w[1]])
            .collect();
        let biases = layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation: Activation::Tanh,
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(layer_sizes: &[usize], rng: &mut crate::Rng) -> Result<Self, NnetError> {
        let mut p = Self::zeros(layer_sizes)?;
        for (l, w) in p.weights.iter_mut().enumerate() {
            let bound = math::sqrt(6.0 / (layer_sizes[l] + layer_sizes[l + 1]) as f64);
            for v in w.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(p)
    }

    /// Rebuilds parameters from raw parts, validating every shape and value.
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        activation: Activation,
    ) -> Result<Self, NnetError> {
        let template = Self::zeros(&layer_sizes)?;
        check_len(template.weights.len(), weights.len())?;
        check_len(template.biases.len(), biases.len())?;
        for (t, w) in template.weights.iter().zip(&weights) {
            check_len(t.len(), w.len())?;
        }
        for (t, b) in template.biases.iter().zip(&biases) {
            check_len(t.len(), b.len())?;
        }
        let p = Self {
            layer_sizes,
            weights,
            biases,
            activation,
        };
        if p.values().any(|v| !v.is_finite()) {
            return Err(NnetError::NonFinite);
        }
        Ok(p)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().expect("at least two layers")
    }

    pub fn num_params(&self) -> usize {
        self.values().count()
    }

    /// All parameters flattened layer by layer, weights before biases.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    /// FNV-1a over the bit patterns of every parameter and the layer sizes.
    pub fn fingerprint(&self) -> u64 {
        const PRIME: u64 = 0x0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: [u8; 8]| {
            for b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(PRIME);
            }
        };
        for s in &self.layer_sizes {
            eat((*s as u64).to_le_bytes());
        }
        for v in self.values() {
            eat(v.to_bits().to_le_bytes());
        }
        h
    }

    /// Output only, no cache.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>, NnetError> {
        check_len(self.input_width(), input.len())?;
        let mut x = input.to_vec();
        let last = self.weights.len() - 1;
        for l in 0..self.weights.len() {
            x = self.layer(l, &x, l < last);
        }
        Ok(x)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache), NnetError> {
        check_len(self.input_width(), input.len())?;
        let mut layers = Vec::with_capacity(self.layer_sizes.len());
        layers.push(input.to_vec());
        let last = self.weights.len() - 1;
        for l in 0..self.weights.len() {
            let next = self.layer(l, &layers[l], l < last);
            layers.push(next);
        }
        let out = layers.last().cloned().unwrap_or_default();
        Ok((out, ForwardCache { layers }))
    }

    fn layer(&self, l: usize, x: &[f64], hidden: bool) -> Vec<f64> {
        let n_in = self.layer_sizes[l];
        let w = &self.weights[l];
        self.biases[l]
            .iter()
            .enumerate()
            .map(|(o, b)| {
                let row = &w[o * n_in..(o + 1) * n_in];
                let z = b + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                if hidden {
                    math::tanh(z)
                } else {
                    z
                }
            })
            .collect()
    }

    /// Gradients of `output · output_grad` with respect to every parameter and the input.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<MlpGrads, NnetError> {
        check_len(self.layer_sizes.len(), cache.layers.len())?;
        for (size, act) in self.layer_sizes.iter().zip(&cache.layers) {
            check_len(*size, act.len())?;
        }
        check_len(self.output_width(), output_grad.len())?;
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = output_grad.to_vec();
        for l in (0..self.weights.len()).rev() {
            let n_in = self.layer_sizes[l];
            let x = &cache.layers[l];
            let w = &self.weights[l];
            let gw = &mut grads.weights[l];
            let mut prev = vec![0.0; n_in];
            for (o, d) in delta.iter().enumerate() {
                grads.biases[l][o] = *d;
                let row = o * n_in;
                for i in 0..n_in {
                    gw[row + i] = d * x[i];
                    prev[i] += d * w[row + i];
                }
            }
            if l > 0 {
                // x is the tanh output of the previous layer.
                for (p, h) in prev.iter_mut().zip(x) {
                    *p *= 1.0 - h * h;
                }
            }
            delta = prev;
        }
        grads.input = delta;
        Ok(grads)
    }
}

/// Runs networks back to back, feeding each output into the next input.
pub fn chain_forward(nets: &[MlpParams], input: &[f64]) -> Result<(Vec<f64>, Vec<ForwardCache>), NnetError> {
    let mut caches = Vec::with_capacity(nets.len());
    let mut x = input.to_vec();
    for net in nets {
        let (out, cache) = net.forward(&x)?;
        caches.push(cache);
        x = out;
    }
    Ok((x, caches))
}

/// Backpropagates through a chain built by [`chain_forward`].
pub fn chain_backward(
    nets: &[MlpParams],
    caches: &[ForwardCache],
    output_grad: &[f64],
) -> Result<Vec<MlpGrads>, NnetError> {
    check_len(nets.len(), caches.len())?;
    let mut grads: Vec<MlpGrads> = Vec::with_capacity(nets.len());
    let mut g = output_grad.to_vec();
    for (net, cache) in nets.iter().zip(caches).rev() {
        let ng = net.backward(cache, &g)?;
        g = ng.input.clone();
        grads.push(ng);
    }
    grads.reverse();
    Ok(grads)
}

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| math::exp(z - m)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + math::ln(logits.iter().map(|z| math::exp(z - m)).sum::<f64>());
    logits.iter().map(|z| z - lse).collect()
}

/// `-log softmax(logits)[label]` and its gradient `softmax(logits) - one_hot(label)`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>), NnetError> {
    if label >= logits.len() {
        return Err(NnetError::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let loss = -log_softmax(logits)[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Adam hyperparameters and moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl OptState {
    pub fn new(params: &MlpParams, learning_rate: f64) -> Self {
        let n = params.num_params();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: vec![0.0; n],
            second: vec![0.0; n],
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut MlpParams, grads: &MlpGrads, opt: &mut OptState) -> Result<(), NnetError> {
    let n = params.num_params();
    check_len(n, opt.first.len())?;
    check_len(n, grads.params().count())?;
    for (a, b) in params.weights.iter().zip(&grads.weights) {
        check_len(a.len(), b.len())?;
    }
    opt.step += 1;
    let t = opt.step as i32;
    let c1 = 1.0 - libm::pow(opt.beta1, f64::from(t));
    let c2 = 1.0 - libm::pow(opt.beta2, f64::from(t));
    let (b1, b2, lr, eps) = (opt.beta1, opt.beta2, opt.learning_rate, opt.epsilon);
    for (((p, g), m), v) in params
        .values_mut()
        .zip(grads.params())
        .zip(opt.first.iter_mut())
        .zip(opt.second.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (math::sqrt(v_hat) + eps);
    }
    Ok(())
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut [&mut MlpGrads], max_norm: f64) -> f64 {
    let norm = math::sqrt(grads.iter().map(|g| g.squared_norm()).sum());
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.params_mut() {
                *v *= k;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_232() -> MlpParams {
        MlpParams::from_parts(
            vec![2, 3, 2],
            vec![
                vec![0.5, -0.25, 0.1, 0.2, -0.3, 0.4],
                vec![1.0, -1.0, 0.5, 0.25, 0.0, -0.5],
            ],
            vec![vec![0.1, 0.0, -0.1], vec![0.05, -0.05]],
            Activation::Tanh,
        )
        .unwrap()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpParams::zeros(&[3, 4, 2]).unwrap();
        assert_eq!(p.predict(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        let p = MlpParams::from_parts(
            vec![2, 2],
            vec![vec![1.0, 0.0, 0.0, 1.0]],
            vec![vec![0.0, 0.0]],
            Activation::Tanh,
        )
        .unwrap();
        assert_eq!(p.predict(&[0.3, -7.0]).unwrap(), vec![0.3, -7.0]);
    }

    #[test]
    fn hand_evaluated_fixture() {
        // Hidden pre-activations for input (1, -1):
        //   0.5 + 0.25 + 0.1 = 0.85
        //   0.1 - 0.2 + 0.0  = -0.1
        //  -0.3 - 0.4 - 0.1  = -0.8
        let h = [libm::tanh(0.85), libm::tanh(-0.1), libm::tanh(-0.8)];
        let o0 = 1.0 * h[0] - 1.0 * h[1] + 0.5 * h[2] + 0.05;
        let o1 = 0.25 * h[0] + 0.0 * h[1] - 0.5 * h[2] - 0.05;
        let out = fixture_232().predict(&[1.0, -1.0]).unwrap();
        // Frozen from the hand evaluation above.
        assert!((o0 - 0.508_719_079_323_961_9).abs() < 1e-12, "{o0}");
        assert!((o1 - 0.454_785_752_592_157_2).abs() < 1e-12, "{o1}");
        assert!((out[0] - o0).abs() < 1e-15);
        assert!((out[1] - o1).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let p = fixture_232();
        assert_eq!(
            p.forward(&[1.0]).unwrap_err(),
            NnetError::ShapeMismatch { expected: 2, found: 1 }
        );
        let (_, cache) = p.forward(&[1.0, 2.0]).unwrap();
        assert!(p.backward(&cache, &[1.0]).is_err());
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let p = fixture_232();
        let (_, cache) = p.forward(&[0.2, 0.7]).unwrap();
        let g = p.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(g.params().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_weight_gradient_is_input() {
        let p = MlpParams::from_parts(vec![1, 1], vec![vec![0.7]], vec![vec![0.0]], Activation::Tanh)
            .unwrap();
        let (_, cache) = p.forward(&[2.5]).unwrap();
        let g = p.backward(&cache, &[1.0]).unwrap();
        assert_eq!(g.weights[0][0], 2.5);
        assert_eq!(g.biases[0][0], 1.0);
        assert_eq!(g.input[0], 0.7);
    }

    #[test]
    fn cross_entropy_cases() {
        let (l, g) = softmax_cross_entropy(&[0.0, 0.0], 1).unwrap();
        assert!((l - core::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(g, vec![0.5, -0.5]);

        let (l, g) = softmax_cross_entropy(&[1000.0, 0.0], 0).unwrap();
        assert!(l.is_finite() && l < 1e-12);
        assert!(g.iter().all(|v| v.is_finite()));

        // ln(1 + e^3)
        let (l, _) = softmax_cross_entropy(&[2.0, -1.0], 1).unwrap();
        assert!((l - 3.048_587_351_573_742).abs() < 1e-12, "{l}");

        assert_eq!(
            softmax_cross_entropy(&[0.0, 1.0], 2),
            Err(NnetError::LabelOutOfRange { label: 2, classes: 2 })
        );
    }

    #[test]
    fn adam_zero_grad_keeps_params() {
        let mut p = fixture_232();
        let before = p.clone();
        let mut opt = OptState::new(&p, 3e-4);
        let g = MlpGrads::zeros_like(&p);
        adam_step(&mut p, &g, &mut opt).unwrap();
        assert_eq!(p, before);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = MlpParams::from_parts(vec![1, 1], vec![vec![0.0]], vec![vec![0.0]], Activation::Tanh)
            .unwrap();
        let mut opt = OptState::new(&p, 0.1);
        let mut g = MlpGrads::zeros_like(&p);
        g.weights[0][0] = 1.0;
        adam_step(&mut p, &g, &mut opt).unwrap();
        // m_hat = 1, v_hat = 1 => update = lr / (1 + eps)
        assert!((p.weights()[0][0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn adam_is_deterministic() {
        let mut rng = crate::seeded_rng(3);
        let p0 = MlpParams::init(&[3, 4, 2], &mut rng).unwrap();
        let (_, cache) = p0.forward(&[0.1, 0.2, 0.3]).unwrap();
        let g = p0.backward(&cache, &[1.0, -1.0]).unwrap();
        let run = || {
            let mut p = p0.clone();
            let mut opt = OptState::new(&p, 0.01);
            adam_step(&mut p, &g, &mut opt).unwrap();
            (p, opt)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn fingerprint_tracks_values() {
        let p = fixture_232();
        let mut q = p.clone();
        assert_eq!(p.fingerprint(), q.fingerprint());
        *q.values_mut().next().unwrap() += 1e-12;
        assert_ne!(p.fingerprint(), q.fingerprint());
    }
}
