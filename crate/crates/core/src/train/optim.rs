//! AdamW with per-group learning rates, and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// One AdamW update of a flat parameter block. `step` counts from 1.
/// Weight decay is applied to the pre-update parameters, outside the
/// adaptive moment scaling.
pub fn adamw_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    cfg: &AdamWConfig,
) {
    let bc1 = 1.0 - cfg.beta1.powf(step as f64);
    let bc2 = 1.0 - cfg.beta2.powf(step as f64);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        let theta = params[i];
        params[i] = theta - lr * m_hat / (v_hat.sqrt() + cfg.eps) - lr * cfg.weight_decay * theta;
    }
}

/// Optimizer state mirroring the model's parameter layout.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    m: ModelParams,
    v: ModelParams,
}

impl AdamW {
    pub fn new(params: &ModelParams, config: AdamWConfig) -> Self {
        AdamW {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// Applies one update; `lr_for` maps each tensor name to its learning rate.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr_for: impl Fn(&str) -> f64) {
        self.step += 1;
        let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
        let p = params.slices_mut();
        let g = grads.slices();
        let m = self.m.slices_mut();
        let v = self.v.slices_mut();
        for ((((name, p), g), m), v) in names.iter().zip(p).zip(g).zip(m).zip(v) {
            adamw_update(p, g, m, v, self.step, lr_for(name), &self.config);
        }
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|s| s.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for s in grads.iter_mut() {
            s.iter_mut().for_each(|g| *g *= k);
        }
    }
    norm
}
