use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub step: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![F::zero(); len],
            v: vec![F::zero(); len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update:
/// `m ← β1·m + (1−β1)·g`, `v ← β2·v + (1−β2)·g²`,
/// `p ← p − lr · m̂ / (sqrt(v̂) + eps)` with `m̂ = m / (1−β1^t)`, `v̂ = v / (1−β2^t)`.
pub fn adam_step<F: Real>(params: &mut [F], grads: &[F], state: &mut AdamState<F>, hyper: &AdamHyper) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam: {} params, {} grads, {}/{} moments",
            params.len(),
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = F::lit(hyper.beta1);
    let b2 = F::lit(hyper.beta2);
    let c1 = F::lit(1.0 - hyper.beta1.powi(t));
    let c2 = F::lit(1.0 - hyper.beta2.powi(t));
    let lr = F::lit(hyper.learning_rate);
    let eps = F::lit(hyper.eps);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (F::one() - b1) * g;
        *v = b2 * *v + (F::one() - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Scales `grads` so their global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_gradients<F: Real>(grads: &mut [F], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = F::lit(max_norm / norm);
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}
