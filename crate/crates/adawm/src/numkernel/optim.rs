//! Adam with global-norm gradient clipping.

use std::collections::BTreeMap;

use super::param::ParamSet;
use super::tensor::Tensor;

#[derive(Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Clip threshold on the global gradient norm; `None` disables clipping.
    pub clip: Option<f64>,
    t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64, eps: f64, clip: Option<f64>) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps, clip, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// Apply one update. Only trainable parameters with a gradient entry move.
    pub fn step(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Tensor>) {
        if self.lr == 0.0 {
            return;
        }
        self.t += 1;
        let scale = match self.clip {
            Some(c) => {
                let norm: f64 = grads
                    .values()
                    .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
                    .sum::<f64>()
                    .sqrt();
                if norm > c {
                    c / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, g) in grads {
            let p = match params.get_mut(name) {
                Ok(p) if p.trainable => p,
                _ => continue,
            };
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            for i in 0..g.numel() {
                let gi = g.get(i) * scale;
                let mi = self.beta1 * m.get(i) + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v.get(i) + (1.0 - self.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                p.value.data_mut()[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
