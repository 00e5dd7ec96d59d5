use std::ops::Range;

use super::linear::disjoint_mut;
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Mat, Real};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormCache<F> {
    normalized: Mat<F>,
    inv_std: Vec<F>,
}

/// Per-frame normalization over the last dimension, then `gain ⊙ x̂ + shift`.
pub fn layer_norm<F: Real>(x: &Mat<F>, gain: &[F], shift: &[F], eps: F) -> Result<(Mat<F>, LayerNormCache<F>)> {
    let d = x.cols();
    if gain.len() != d || shift.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "layer norm over width {d} with gain {} and shift {}",
            gain.len(),
            shift.len()
        )));
    }
    let n = F::lit(d as f64);
    let mut normalized = Mat::zeros(x.rows(), d);
    let mut y = Mat::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    for t in 0..x.rows() {
        let row = x.row(t);
        let mean = row.iter().copied().sum::<F>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
        let is = F::one() / (var + eps).sqrt();
        inv_std.push(is);
        let xh = normalized.row_mut(t);
        for (h, &v) in xh.iter_mut().zip(row) {
            *h = (v - mean) * is;
        }
        let yr = y.row_mut(t);
        for k in 0..d {
            yr[k] = gain[k] * normalized.get(t, k) + shift[k];
        }
    }
    Ok((y, LayerNormCache { normalized, inv_std }))
}

/// Returns `dx`; accumulates `dgain`/`dshift`.
pub fn layer_norm_backward<F: Real>(
    cache: &LayerNormCache<F>,
    gain: &[F],
    dy: &Mat<F>,
    dgain: &mut [F],
    dshift: &mut [F],
) -> Mat<F> {
    let d = dy.cols();
    let n = F::lit(d as f64);
    let mut dx = Mat::zeros(dy.rows(), d);
    let mut dxh = vec![F::zero(); d];
    for t in 0..dy.rows() {
        let g = dy.row(t);
        let xh = cache.normalized.row(t);
        for k in 0..d {
            dgain[k] += g[k] * xh[k];
            dshift[k] += g[k];
            dxh[k] = g[k] * gain[k];
        }
        let mean_d = dxh.iter().copied().sum::<F>() / n;
        let mean_dx = dxh.iter().zip(xh).map(|(&a, &b)| a * b).sum::<F>() / n;
        let is = cache.inv_std[t];
        for (k, o) in dx.row_mut(t).iter_mut().enumerate() {
            *o = is * (dxh[k] - mean_d - xh[k] * mean_dx);
        }
    }
    dx
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormSlot {
    pub gain: Range<usize>,
    pub shift: Range<usize>,
}

impl LayerNormSlot {
    pub fn resolve<F: Real>(store: &ParamStore<F>, prefix: &str, dim: usize) -> Result<Self> {
        Ok(LayerNormSlot {
            gain: store.slot(&format!("{prefix}.gain"), &[dim])?,
            shift: store.slot(&format!("{prefix}.shift"), &[dim])?,
        })
    }

    pub fn forward<F: Real>(&self, values: &[F], x: &Mat<F>) -> Result<(Mat<F>, LayerNormCache<F>)> {
        layer_norm(
            x,
            &values[self.gain.clone()],
            &values[self.shift.clone()],
            F::lit(LAYER_NORM_EPS),
        )
    }

    pub fn backward<F: Real>(&self, values: &[F], grads: &mut [F], cache: &LayerNormCache<F>, dy: &Mat<F>) -> Mat<F> {
        let (dg, ds) = disjoint_mut(grads, self.gain.clone(), self.shift.clone());
        layer_norm_backward(cache, &values[self.gain.clone()], dy, dg, ds)
    }
}
