//! Adam with bias correction over a flat parameter vector.

use super::network::quantize;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates, one entry per network parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    /// One update in place. Parameters and moments are stored at `f32`
    /// precision afterwards.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            let m = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            let v = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = m / c1;
            let v_hat = v / c2;
            params[i] = quantize(params[i] - lr * m_hat / (v_hat.sqrt() + EPSILON));
            self.m[i] = quantize(m);
            self.v[i] = quantize(v);
        }
    }
}
