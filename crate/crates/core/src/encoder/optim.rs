use serde::{Deserialize, Serialize};

use super::{Params, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub step: u64,
    pub m: Params<F>,
    pub v: Params<F>,
    pub hp: AdamConfig,
}

impl<F: Real> AdamState<F> {
    pub fn new(params: &Params<F>, hp: AdamConfig) -> Self {
        AdamState {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
            hp,
        }
    }
}

/// Linear warmup over the first 10% of `total` steps to `peak`, then linear
/// decay to zero at `total`.
pub fn lr_at(step: u64, total: u64, peak: f64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let warmup = (0.1 * total as f64).round() as u64;
    if step < warmup {
        peak * step as f64 / warmup as f64
    } else {
        let rest = (total - warmup).max(1) as f64;
        (peak * total.saturating_sub(step) as f64 / rest).max(0.0)
    }
}

/// Bias-corrected Adam update with learning rate `lr`.
pub fn adam_step<F: Real>(params: &mut Params<F>, grads: &Params<F>, state: &mut AdamState<F>, lr: f64) {
    state.step += 1;
    let hp = state.hp;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    let (b1, b2) = (F::of(hp.beta1), F::of(hp.beta2));
    let (one_b1, one_b2) = (F::of(1.0 - hp.beta1), F::of(1.0 - hp.beta2));
    let (inv_bc1, inv_bc2) = (F::of(1.0 / bc1), F::of(1.0 / bc2));
    let (lr, eps) = (F::of(lr), F::of(hp.eps));
    let mut m = state.m.named_slices_mut();
    let mut v = state.v.named_slices_mut();
    let g = grads.named_slices();
    let mut p = params.named_slices_mut();
    assert_eq!(p.len(), g.len(), "gradient structure differs from parameters");
    assert_eq!(p.len(), m.len(), "optimizer state structure differs from parameters");
    for (((pt, gt), mt), vt) in p.iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
        for (((pv, &gv), mv), vv) in pt.1.iter_mut().zip(gt.1.iter()).zip(mt.1.iter_mut()).zip(vt.1.iter_mut()) {
            *mv = b1 * *mv + one_b1 * gv;
            *vv = b2 * *vv + one_b2 * gv * gv;
            let mhat = *mv * inv_bc1;
            let vhat = *vv * inv_bc2;
            *pv -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}
