//! Decoupled-weight-decay adaptive-moment updates and the warmup/linear-decay
//! learning-rate schedule.

use std::collections::BTreeMap;

use super::model::{Gradients, StanceModel};
use super::train::TrainConfig;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Piecewise-linear schedule: 0 up to the peak over the warmup steps, then
/// linearly back to 0 at `total_steps`. Continuous and nonnegative.
pub fn lr_at_step(step: u64, total_steps: u64, config: &TrainConfig) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    let total = total_steps as f64;
    let s = (step.min(total_steps)) as f64;
    let warmup = config.warmup_fraction * total;
    if s < warmup {
        config.peak_lr * s / warmup
    } else {
        config.peak_lr * (total - s) / (total - warmup)
    }
}

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Optimizer state. Projection rows get moment rows on first touch; a row
/// that has never received a gradient is exactly zero under this update, so
/// the lazy representation matches the dense one.
pub struct AdamW {
    t: u64,
    proj: BTreeMap<u32, Moments>,
    w1: Moments,
    b1: Moments,
    w2: Moments,
    b2: Moments,
}

impl AdamW {
    pub fn new(model: &StanceModel) -> Self {
        let e = model.embed_dim;
        AdamW {
            t: 0,
            proj: BTreeMap::new(),
            w1: Moments::zeros(e * e),
            b1: Moments::zeros(e),
            w2: Moments::zeros(e * 2),
            b2: Moments::zeros(2),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update: bias-corrected adaptive step plus decoupled decay. Decay
    /// applies to the projection and the linear weights, not the biases.
    pub fn apply(
        &mut self,
        model: &mut StanceModel,
        grads: &Gradients,
        lr: f64,
        weight_decay: f64,
    ) {
        self.t += 1;
        let t = self.t;
        let bc1 = 1.0 - BETA1.powi(t as i32);
        let bc2 = 1.0 - BETA2.powi(t as i32);

        let update = |w: &mut [f64], g: &[f64], mom: &mut Moments, decay: f64| {
            for i in 0..w.len() {
                mom.m[i] = BETA1 * mom.m[i] + (1.0 - BETA1) * g[i];
                mom.v[i] = BETA2 * mom.v[i] + (1.0 - BETA2) * g[i] * g[i];
                let m_hat = mom.m[i] / bc1;
                let v_hat = mom.v[i] / bc2;
                w[i] -= lr * (m_hat / (v_hat.sqrt() + EPS) + decay * w[i]);
            }
        };

        let e_dim = model.embed_dim;
        for (&row_idx, g_row) in &grads.projection {
            let row = model
                .projection
                .entry(row_idx)
                .or_insert_with(|| vec![0.0; e_dim]);
            let mom = self
                .proj
                .entry(row_idx)
                .or_insert_with(|| Moments::zeros(e_dim));
            update(row, g_row, mom, weight_decay);
        }
        update(&mut model.w1, &grads.w1, &mut self.w1, weight_decay);
        update(&mut model.b1, &grads.b1, &mut self.b1, 0.0);
        update(&mut model.w2, &grads.w2, &mut self.w2, weight_decay);
        update(&mut model.b2, &grads.b2, &mut self.b2, 0.0);
    }
}
