//! Adaptive moment estimation with linear learning-rate warmup.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::params::ParamSet;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps over which the learning rate ramps linearly from 0 to `lr`.
    pub warmup_steps: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: 0,
        }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamSet) -> Self {
        let m = params
            .entries()
            .iter()
            .map(|e| vec![0.0; e.value.len()])
            .collect();
        let v = params
            .entries()
            .iter()
            .map(|e| vec![0.0; e.value.len()])
            .collect();
        Adam {
            cfg,
            step: 0,
            m,
            v,
        }
    }

    fn lr_at(&self, step: usize) -> f64 {
        if self.cfg.warmup_steps > 0 && step <= self.cfg.warmup_steps {
            self.cfg.lr * step as f64 / self.cfg.warmup_steps as f64
        } else {
            self.cfg.lr
        }
    }

    /// Applies one update. `grads[i]` is the gradient for the i-th entry of
    /// `params` (in `ParamSet` order); `None` means no gradient flowed and is
    /// treated as zero.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Vec<f64>>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(CoreError::Contract(alloc::format!(
                "optimizer got {} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        self.step += 1;
        let lr = self.lr_at(self.step);
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bias1 = 1.0 - libm::pow(b1, self.step as f64);
        let bias2 = 1.0 - libm::pow(b2, self.step as f64);
        for (idx, value) in params.values_mut().enumerate() {
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for j in 0..value.len() {
                let g = grads[idx].as_ref().map(|g| g[j]).unwrap_or(0.0);
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                value.data[j] -= lr * m_hat / (libm::sqrt(v_hat) + self.cfg.eps);
            }
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }
}
