//! Named trainable parameters with gradient buffers and Adam state.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
struct Entry {
    value: Tensor,
    grad: Tensor,
    m: Tensor,
    v: Tensor,
}

/// All model parameters, keyed by name. Gradients accumulate across
/// backward passes until an optimizer step consumes and clears them.
#[derive(Debug, Default, Clone)]
pub struct ParameterStore {
    entries: BTreeMap<String, Entry>,
    step: u64,
}

impl ParameterStore {
    pub fn new() -> ParameterStore {
        ParameterStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        let shape = value.shape().to_vec();
        let old = self.entries.insert(
            name.to_string(),
            Entry {
                value,
                grad: Tensor::zeros(&shape),
                m: Tensor::zeros(&shape),
                v: Tensor::zeros(&shape),
            },
        );
        assert!(old.is_none(), "duplicate parameter {name}");
    }

    fn entry(&self, name: &str) -> &Entry {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.entry(name).value
    }

    pub fn value_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .value
    }

    pub fn grad(&self, name: &str) -> &Tensor {
        &self.entry(name).grad
    }

    pub fn add_grad(&mut self, name: &str, grad: &[f64]) {
        let entry = self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        assert_eq!(entry.value.n_values(), grad.len(), "gradient shape for {name}");
        for (g, &d) in entry.grad.values_mut().iter_mut().zip(grad) {
            *g += d;
        }
    }

    pub fn zero_grads(&mut self) {
        for entry in self.entries.values_mut() {
            entry.grad.values_mut().fill(0.0);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn n_values(&self) -> usize {
        self.entries.values().map(|e| e.value.n_values()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Bias-corrected Adam update over every parameter; gradients are
    /// cleared afterwards. Moment buffers persist in memory only, so a
    /// reloaded checkpoint restarts the optimizer state.
    pub fn adam_step(&mut self, lr: f64, beta1: f64, beta2: f64, eps: f64) {
        self.step += 1;
        let t = self.step as i32;
        let m_corr = 1.0 - beta1.powi(t);
        let v_corr = 1.0 - beta2.powi(t);
        for entry in self.entries.values_mut() {
            let grads = entry.grad.values_mut();
            let ms = entry.m.values_mut();
            let vs = entry.v.values_mut();
            for (i, w) in entry.value.values_mut().iter_mut().enumerate() {
                let g = grads[i];
                ms[i] = beta1 * ms[i] + (1.0 - beta1) * g;
                vs[i] = beta2 * vs[i] + (1.0 - beta2) * g * g;
                let m_hat = ms[i] / m_corr;
                let v_hat = vs[i] / v_corr;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            grads.fill(0.0);
        }
    }

    /// Dense layer parameters `{prefix}.w` and `{prefix}.b`, the weight
    /// drawn uniformly from ±sqrt(6/(d_in+d_out)) and the bias zero.
    pub fn init_dense(&mut self, rng: &mut ChaCha8Rng, prefix: &str, d_in: usize, d_out: usize) {
        self.insert(&format!("{prefix}.w"), xavier_uniform(rng, &[d_in, d_out], d_in, d_out));
        self.insert(&format!("{prefix}.b"), Tensor::zeros(&[d_out]));
    }

    pub fn init_embedding(&mut self, rng: &mut ChaCha8Rng, name: &str, rows: usize, dim: usize) {
        self.insert(name, xavier_uniform(rng, &[rows, dim], rows, dim));
    }

    pub fn init_layer_norm(&mut self, prefix: &str, dim: usize) {
        self.insert(&format!("{prefix}.gain"), Tensor::filled(&[dim], 1.0));
        self.insert(&format!("{prefix}.shift"), Tensor::zeros(&[dim]));
    }
}

fn xavier_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let values = (0..shape.iter().product::<usize>())
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::new(shape, values)
}
