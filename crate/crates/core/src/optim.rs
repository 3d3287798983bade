//! Adam with bias correction and global-norm gradient clipping.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling, applied before the moment updates.
    pub clip: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Applied { grad_norm: f64, clipped: bool },
    /// A non-finite gradient poisons the whole step; nothing moves.
    Skipped,
}

#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Streaming two-phase stepper: `begin_step` inspects all gradients at once
/// (the clip norm is global), then `update_param` is called once per
/// parameter in a stable order. Parameter count, order, and shapes must not
/// change between steps.
#[derive(Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    moments: Vec<Moments>,
    t: u64,
    scale: f64,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            moments: Vec::new(),
            t: 0,
            scale: 1.0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Decides whether this step runs. On `Applied`, the clip scale is
    /// latched for the following `update_param` calls.
    pub fn begin_step(&mut self, grads: &[Vec<f64>]) -> StepOutcome {
        let mut sq = 0.0;
        for g in grads {
            for &x in g {
                if !x.is_finite() {
                    log::warn!("adam: non-finite gradient, step {} skipped", self.t + 1);
                    return StepOutcome::Skipped;
                }
                sq += x * x;
            }
        }
        let norm = math::sqrt(sq);
        let clipped = norm > self.cfg.clip;
        self.scale = if clipped { self.cfg.clip / norm } else { 1.0 };
        self.t += 1;
        StepOutcome::Applied {
            grad_norm: norm,
            clipped,
        }
    }

    /// Applies the update for parameter `idx`. Only valid after a
    /// `begin_step` that returned `Applied` in this same step.
    pub fn update_param(&mut self, idx: usize, values: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(values.len(), grad.len());
        while self.moments.len() <= idx {
            self.moments.push(Moments::default());
        }
        let slot = &mut self.moments[idx];
        if slot.m.is_empty() {
            slot.m = vec![0.0; grad.len()];
            slot.v = vec![0.0; grad.len()];
        }
        debug_assert_eq!(slot.m.len(), grad.len());
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - powi(b1, self.t);
        let bc2 = 1.0 - powi(b2, self.t);
        for i in 0..grad.len() {
            let gp = grad[i] * self.scale;
            slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * gp;
            slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * gp * gp;
            let m_hat = slot.m[i] / bc1;
            let v_hat = slot.v[i] / bc2;
            values[i] -= self.cfg.lr * m_hat / (math::sqrt(v_hat) + self.cfg.eps);
        }
    }
}

fn powi(base: f64, exp: u64) -> f64 {
    let mut acc = 1.0;
    let mut b = base;
    let mut e = exp;
    while e > 0 {
        if e & 1 == 1 {
            acc *= b;
        }
        b *= b;
        e >>= 1;
    }
    acc
}
