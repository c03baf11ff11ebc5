//! Multilayer perceptron Q-network with hand-written backpropagation.
//!
//! Parameters live in one flat vector laid out layer by layer as
//! `[W0, b0, W1, b1, ...]`, each `W` row-major with shape `(outputs, inputs)`.
//! Hidden layers use ReLU, the output layer is linear.
//!
//! Values are computed in `f64` but every stored parameter is kept exactly
//! representable in `f32`, which is the checkpoint's on-disk precision.

use rand::Rng;

/// Round-trips a value through `f32`.
#[inline]
pub(crate) fn quantize(x: f64) -> f64 {
    x as f32 as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    shape: Vec<usize>,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for backpropagation.
pub struct ForwardTrace {
    /// Post-activation output of every layer (`layers.len()` entries).
    activations: Vec<Vec<f64>>,
    /// Indices of non-zero input features.
    active_inputs: Vec<usize>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().unwrap()
    }
}

impl QNetwork {
    /// Zero-initialised network of the given layer widths.
    pub fn zeros(shape: &[usize]) -> Self {
        assert!(
            shape.len() >= 2,
            "need at least an input and an output width"
        );
        let n = Self::param_count_for(shape);
        QNetwork {
            shape: shape.to_vec(),
            params: vec![0.0; n],
        }
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(shape);
        for layer in 0..net.layer_count() {
            let (fan_in, fan_out) = (shape[layer], shape[layer + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let (w, _) = net.layer_ranges(layer);
            for p in &mut net.params[w] {
                *p = quantize(rng.random_range(-limit..limit));
            }
        }
        net
    }

    pub fn from_params(shape: &[usize], params: Vec<f64>) -> Option<Self> {
        (params.len() == Self::param_count_for(shape)).then(|| QNetwork {
            shape: shape.to_vec(),
            params,
        })
    }

    fn param_count_for(shape: &[usize]) -> usize {
        shape.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn layer_count(&self) -> usize {
        self.shape.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.shape[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Weight and bias index ranges of `layer` in the flat vector.
    pub fn layer_ranges(&self, layer: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let mut offset = 0;
        for l in 0..layer {
            offset += self.shape[l] * self.shape[l + 1] + self.shape[l + 1];
        }
        let (i, o) = (self.shape[layer], self.shape[layer + 1]);
        let w = offset..offset + i * o;
        let b = w.end..w.end + o;
        (w, b)
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.trace(input).activations.pop().unwrap()
    }

    /// Forward pass keeping every layer's activations.
    ///
    /// The first layer only visits non-zero inputs; hashed state embeddings
    /// are sparse.
    pub fn trace(&self, input: &[f64]) -> ForwardTrace {
        assert_eq!(input.len(), self.input_dim(), "input width mismatch");
        let active_inputs: Vec<usize> = (0..input.len()).filter(|&j| input[j] != 0.0).collect();
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(self.layer_count());
        for layer in 0..self.layer_count() {
            let (w, b) = self.layer_ranges(layer);
            let (n_in, n_out) = (self.shape[layer], self.shape[layer + 1]);
            let weights = &self.params[w];
            let bias = &self.params[b];
            let mut out = bias.to_vec();
            if layer == 0 {
                for (o, acc) in out.iter_mut().enumerate() {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    for &j in &active_inputs {
                        *acc += row[j] * input[j];
                    }
                }
            } else {
                let x = &activations[layer - 1];
                for (o, acc) in out.iter_mut().enumerate() {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    *acc += row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
                }
            }
            if layer + 1 < self.layer_count() {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            debug_assert_eq!(out.len(), n_out);
            activations.push(out);
        }
        ForwardTrace {
            activations,
            active_inputs,
        }
    }

    /// Accumulates into `grad` the gradient of `sum_k d_out[k] * Q_k(input)`.
    pub fn backward(&self, input: &[f64], trace: &ForwardTrace, d_out: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let mut delta = d_out.to_vec();
        for layer in (0..self.layer_count()).rev() {
            let (w, b) = self.layer_ranges(layer);
            let n_in = self.shape[layer];
            for (o, d) in delta.iter().enumerate() {
                grad[b.start + o] += d;
            }
            if layer == 0 {
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = w.start + o * n_in;
                    for &j in &trace.active_inputs {
                        grad[row + j] += d * input[j];
                    }
                }
                break;
            }
            let x = &trace.activations[layer - 1];
            let weights = &self.params[w.clone()];
            let mut prev = vec![0.0; n_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = o * n_in;
                for j in 0..n_in {
                    grad[w.start + row + j] += d * x[j];
                    prev[j] += d * weights[row + j];
                }
            }
            // ReLU derivative on the hidden layer feeding this one.
            for (p, &a) in prev.iter_mut().zip(x) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }

    /// Copies parameters from `other` (same shape).
    pub fn copy_from(&mut self, other: &QNetwork) {
        assert_eq!(self.shape, other.shape);
        self.params.copy_from_slice(&other.params);
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = QNetwork::zeros(&[1536, 64, 64, 12]);
        let mut x = vec![0.0; 1536];
        x[3] = 1.0;
        assert_eq!(net.forward(&x), vec![0.0; 12]);
        assert_eq!(
            net.param_count(),
            1536 * 64 + 64 + 64 * 64 + 64 + 64 * 12 + 12
        );
    }

    #[test]
    fn init_is_seeded_and_within_limits() {
        let a = QNetwork::new(&[8, 4, 3], &mut rng::stream(1, &[]));
        let b = QNetwork::new(&[8, 4, 3], &mut rng::stream(1, &[]));
        assert_eq!(a, b);
        let (w, bias) = a.layer_ranges(0);
        let limit = (6.0f64 / 12.0).sqrt();
        assert!(a.params()[w].iter().all(|p| p.abs() <= limit));
        assert!(a.params()[bias].iter().all(|&p| p == 0.0));
        assert!(a.params().iter().all(|&p| quantize(p) == p));
    }
}
