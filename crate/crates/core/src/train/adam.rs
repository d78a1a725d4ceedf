//! Adam with bias correction and optional L2 weight decay.

use serde::{Deserialize, Serialize};

use super::model::Gradients;
use super::state::PromptState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Added to the gradient as `weight_decay * param`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates for one parameter block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One Adam update of `params` in place; `t` is the 1-based step count.
pub fn adam_step(params: &mut [f64], grads: &[f64], moments: &mut Moments, t: u64, hyper: &AdamConfig) {
    assert!(t >= 1, "Adam step count starts at 1");
    assert_eq!(params.len(), grads.len());
    if moments.m.len() != params.len() {
        *moments = Moments::zeros(params.len());
    }
    let c1 = 1.0 - hyper.beta1.powf(t as f64);
    let c2 = 1.0 - hyper.beta2.powf(t as f64);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(moments.m.iter_mut())
        .zip(moments.v.iter_mut())
    {
        let g = g + hyper.weight_decay * *p;
        *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
        *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
}

/// Adam over the blocks of a [`PromptState`]. Blocks not listed as
/// trainable are left untouched.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<Moments>,
    trainable: Vec<bool>,
}

impl Adam {
    pub fn new(config: AdamConfig, trainable: Vec<bool>) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
            trainable,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, state: &mut PromptState, grads: &Gradients) {
        self.step += 1;
        let grad_blocks = grads.blocks();
        let mut param_blocks = state.blocks_mut();
        assert_eq!(grad_blocks.len(), param_blocks.len(), "gradient/state block mismatch");
        if self.moments.len() != param_blocks.len() {
            self.moments = param_blocks.iter().map(|b| Moments::zeros(b.len())).collect();
        }
        for (i, (params, g)) in param_blocks.iter_mut().zip(grad_blocks).enumerate() {
            if self.trainable.get(i).copied().unwrap_or(true) {
                adam_step(params, g, &mut self.moments[i], self.step, &self.config);
            }
        }
    }
}
