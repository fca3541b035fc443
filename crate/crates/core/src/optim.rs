//! Adam with optional decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::nn::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers are keyed by slot. Callers must present tensors in the
/// same slot order on every step.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub learning_rate: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            config,
            learning_rate,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Advances the shared step counter. Call once before a round of
    /// [`Adam::update`] calls.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update<F: Real>(&mut self, slot: usize, param: &mut [F], grad: &[F]) {
        assert_eq!(param.len(), grad.len(), "parameter and gradient lengths differ");
        assert!(self.step > 0, "begin_step must precede update");
        while self.first.len() <= slot {
            self.first.push(Vec::new());
            self.second.push(Vec::new());
        }
        if self.first[slot].is_empty() {
            self.first[slot] = vec![0.0; param.len()];
            self.second[slot] = vec![0.0; param.len()];
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let m = &mut self.first[slot];
        let v = &mut self.second[slot];
        for i in 0..param.len() {
            let g = grad[i].f64();
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let mut p = param[i].f64();
            if self.weight_decay > 0.0 {
                p -= self.learning_rate * self.weight_decay * p;
            }
            p -= self.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            param[i] = F::of(p);
        }
    }
}
