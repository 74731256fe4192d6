use serde::{Deserialize, Serialize};

use super::{Module, TensorKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer. Moment buffers are matched to parameters by
/// visit order, so one instance must always step the same module.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update from the accumulated gradients, then clears them.
    /// A parameter whose gradient has always been zero does not move.
    pub fn step<M: Module + ?Sized>(&mut self, module: &mut M) {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let mut idx = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        module.visit("", &mut |_, kind, p| {
            if kind != TensorKind::Trainable {
                return;
            }
            if ms.len() <= idx {
                ms.push(vec![0.0; p.len()]);
                vs.push(vec![0.0; p.len()]);
            }
            let (m, v) = (&mut ms[idx], &mut vs[idx]);
            for k in 0..p.len() {
                let g = p.grad[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p.value[k] -= lr * mh / (vh.sqrt() + eps);
            }
            p.zero_grad();
            idx += 1;
        });
    }
}
