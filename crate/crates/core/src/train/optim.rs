//! AdamW with decoupled weight decay and a multi-step learning-rate schedule.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-15, weight_decay: 1e-5 }
    }
}

/// First and second moment buffers for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n] }
    }
}

/// One AdamW update of `param` in place. `step` counts from 1.
pub fn adamw_step(param: &mut [f64], grad: &[f64], moments: &mut Moments, lr: f64, step: u64, cfg: &AdamWConfig) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    let decay = 1.0 - lr * cfg.weight_decay;
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(moments.m.iter_mut()).zip(moments.v.iter_mut()) {
        *p *= decay;
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// `base · gamma^(number of milestones ≤ iteration)`.
pub fn scheduled_lr(base: f64, gamma: f64, milestones: &[u64], iteration: u64) -> f64 {
    let passed = milestones.iter().filter(|&&m| m <= iteration).count();
    base * gamma.powi(passed as i32)
}

/// Milestones at the same fractions of the budget as a 60k/90k/100k/108k
/// schedule over 120k iterations.
pub fn scaled_milestones(iterations: u64) -> Vec<u64> {
    let mut out: Vec<u64> = [60.0, 90.0, 100.0, 108.0]
        .iter()
        .map(|f| (iterations as f64 * f / 120.0).round() as u64)
        .filter(|&m| m > 0 && m < iterations)
        .collect();
    out.dedup();
    out
}
