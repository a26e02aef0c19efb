//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::nn::Module;
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Moment estimates are matched to parameters by visitation order.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    step: u64,
    moments: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step<M: Module<T> + ?Sized>(&mut self, module: &mut M) {
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let lr: T = lit(c.lr);
        let decay: T = lit(1.0 - c.lr * c.weight_decay);
        let (b1, b2): (T, T) = (lit(c.beta1), lit(c.beta2));
        let bc1: T = lit(1.0 - c.beta1.powi(t));
        let bc2_sqrt: T = lit((1.0 - c.beta2.powi(t)).sqrt());
        let eps: T = lit(c.eps);
        let step_size = lr / bc1;
        let moments = &mut self.moments;
        let mut idx = 0;
        module.visit_params(&mut |_, p| {
            if moments.len() <= idx {
                moments.push((vec![T::zero(); p.len()], vec![T::zero(); p.len()]));
            }
            let (m, v) = &mut moments[idx];
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let denom = v[i].sqrt() / bc2_sqrt + eps;
                p.value[i] = p.value[i] * decay - step_size * m[i] / denom;
            }
            idx += 1;
        });
    }
}
