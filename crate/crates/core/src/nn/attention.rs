//! Multi-head scaled dot-product self-attention with key padding masks.
//!
//! Masked keys get a score of −∞, so their attention weight is exactly zero.
//! Padded query rows produce zero output and receive zero gradient.

use super::batch::{zero_padded_rows, PaddedBatch};
use super::linear::LinearSlot;
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Mat, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention {
    pub query: LinearSlot,
    pub key: LinearSlot,
    pub value: LinearSlot,
    pub output: LinearSlot,
    pub d_model: usize,
    pub num_heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<F> {
    input: Mat<F>,
    q: Mat<F>,
    k: Mat<F>,
    v: Mat<F>,
    /// Per head, `frames × frames` attention weights (zero rows for padded queries).
    weights: Vec<Mat<F>>,
    context: Mat<F>,
    mask: Vec<bool>,
}

impl<F> AttentionCache<F> {
    pub fn weights(&self) -> &[Mat<F>] {
        &self.weights
    }
}

impl SelfAttention {
    pub fn resolve<F: Real>(store: &ParamStore<F>, prefix: &str, d_model: usize, num_heads: usize) -> Result<Self> {
        if num_heads == 0 || !d_model.is_multiple_of(num_heads) {
            return Err(Error::InvalidConfig(format!(
                "{num_heads} heads do not divide d_model {d_model}"
            )));
        }
        Ok(SelfAttention {
            query: LinearSlot::resolve(store, &format!("{prefix}.q"), d_model, d_model)?,
            key: LinearSlot::resolve(store, &format!("{prefix}.k"), d_model, d_model)?,
            value: LinearSlot::resolve(store, &format!("{prefix}.v"), d_model, d_model)?,
            output: LinearSlot::resolve(store, &format!("{prefix}.o"), d_model, d_model)?,
            d_model,
            num_heads,
        })
    }

    /// One item: `x` is `frames × d_model`, `mask` marks real frames.
    pub fn forward<F: Real>(&self, values: &[F], x: &Mat<F>, mask: &[bool]) -> Result<(Mat<F>, AttentionCache<F>)> {
        if x.cols() != self.d_model {
            return Err(Error::ShapeMismatch(format!(
                "attention input width {} != d_model {}",
                x.cols(),
                self.d_model
            )));
        }
        if mask.len() != x.rows() {
            return Err(Error::MaskShapeMismatch(format!(
                "{} mask entries for {} frames",
                mask.len(),
                x.rows()
            )));
        }
        let frames = x.rows();
        let dh = self.d_model / self.num_heads;
        let scale = F::one() / F::lit(dh as f64).sqrt();
        let q = self.query.forward(values, x)?;
        let k = self.key.forward(values, x)?;
        let v = self.value.forward(values, x)?;
        let mut context = Mat::zeros(frames, self.d_model);
        let mut weights = Vec::with_capacity(self.num_heads);
        let mut scores = vec![F::zero(); frames];
        for h in 0..self.num_heads {
            let cols = h * dh..(h + 1) * dh;
            let mut w = Mat::zeros(frames, frames);
            for i in (0..frames).filter(|&i| mask[i]) {
                let qi = &q.row(i)[cols.clone()];
                let mut max = F::neg_infinity();
                for j in 0..frames {
                    scores[j] = if mask[j] {
                        let s = qi.iter().zip(&k.row(j)[cols.clone()]).map(|(&a, &b)| a * b).sum::<F>() * scale;
                        max = max.max(s);
                        s
                    } else {
                        F::neg_infinity()
                    };
                }
                let wi = w.row_mut(i);
                let mut total = F::zero();
                for j in 0..frames {
                    if mask[j] {
                        wi[j] = (scores[j] - max).exp();
                        total += wi[j];
                    }
                }
                for p in wi.iter_mut() {
                    *p /= total;
                }
                let ci = &mut context.row_mut(i)[cols.clone()];
                for (j, &p) in wi.iter().enumerate() {
                    if p != F::zero() {
                        for (c, &vv) in ci.iter_mut().zip(&v.row(j)[cols.clone()]) {
                            *c += p * vv;
                        }
                    }
                }
            }
            weights.push(w);
        }
        let mut out = self.output.forward(values, &context)?;
        zero_padded_rows(&mut out, mask);
        Ok((
            out,
            AttentionCache {
                input: x.clone(),
                q,
                k,
                v,
                weights,
                context,
                mask: mask.to_vec(),
            },
        ))
    }

    /// Returns the input gradient; accumulates parameter gradients.
    pub fn backward<F: Real>(&self, values: &[F], grads: &mut [F], cache: &AttentionCache<F>, dy: &Mat<F>) -> Mat<F> {
        let frames = cache.input.rows();
        let dh = self.d_model / self.num_heads;
        let scale = F::one() / F::lit(dh as f64).sqrt();
        let mut dout = dy.clone();
        zero_padded_rows(&mut dout, &cache.mask);
        let dctx = self.output.backward(values, grads, &cache.context, &dout);

        let mut dq = Mat::zeros(frames, self.d_model);
        let mut dk = Mat::zeros(frames, self.d_model);
        let mut dv = Mat::zeros(frames, self.d_model);
        let mut dp = vec![F::zero(); frames];
        for h in 0..self.num_heads {
            let cols = h * dh..(h + 1) * dh;
            let w = &cache.weights[h];
            for i in (0..frames).filter(|&i| cache.mask[i]) {
                let dci = &dctx.row(i)[cols.clone()];
                let wi = w.row(i);
                let mut dot = F::zero();
                for j in 0..frames {
                    if wi[j] == F::zero() {
                        dp[j] = F::zero();
                        continue;
                    }
                    dp[j] = dci.iter().zip(&cache.v.row(j)[cols.clone()]).map(|(&a, &b)| a * b).sum();
                    dot += wi[j] * dp[j];
                    for (g, &c) in dv.row_mut(j)[cols.clone()].iter_mut().zip(dci) {
                        *g += wi[j] * c;
                    }
                }
                for j in 0..frames {
                    if wi[j] == F::zero() {
                        continue;
                    }
                    let ds = wi[j] * (dp[j] - dot) * scale;
                    let kj = &cache.k.row(j)[cols.clone()];
                    for (g, &kv) in dq.row_mut(i)[cols.clone()].iter_mut().zip(kj) {
                        *g += ds * kv;
                    }
                    let qi = &cache.q.row(i)[cols.clone()];
                    for (g, &qv) in dk.row_mut(j)[cols.clone()].iter_mut().zip(qi) {
                        *g += ds * qv;
                    }
                }
            }
        }
        let mut dx = self.query.backward(values, grads, &cache.input, &dq);
        dx.add_assign(&self.key.backward(values, grads, &cache.input, &dk));
        dx.add_assign(&self.value.backward(values, grads, &cache.input, &dv));
        dx
    }

    pub fn forward_batch<F: Real>(&self, values: &[F], x: &PaddedBatch<F>) -> Result<PaddedBatch<F>> {
        x.validate(self.d_model)?;
        let outs = x
            .values
            .iter()
            .zip(&x.frame_mask)
            .map(|(v, m)| self.forward(values, v, m).map(|(o, _)| o))
            .collect::<Result<Vec<_>>>()?;
        Ok(x.with_values(outs))
    }
}

/// Self-attention over a padded batch using the parameters under `prefix`.
pub fn mha_self_attention<F: Real>(
    x: &PaddedBatch<F>,
    store: &ParamStore<F>,
    prefix: &str,
    num_heads: usize,
) -> Result<PaddedBatch<F>> {
    let attn = SelfAttention::resolve(store, prefix, x.width(), num_heads)?;
    attn.forward_batch(store.values(), x)
}
