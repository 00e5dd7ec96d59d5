//! Post-norm transformer encoder stack:
//! `x → x + attn(x) → norm → y + ffn(y) → norm`, with ReLU feed-forward and
//! sinusoidal positions added once at the input.

use serde::{Deserialize, Serialize};

use super::attention::{AttentionCache, SelfAttention};
use super::batch::{zero_padded_rows, PaddedBatch};
use super::layer_norm::{LayerNormCache, LayerNormSlot};
use super::linear::LinearSlot;
use super::params::ParamStore;
use super::positions::sinusoidal_positions;
use crate::error::{Error, Result};
use crate::rng::{Purpose, Stream};
use crate::tensor::{Mat, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub d_ff: usize,
    pub dropout_rate: f32,
    /// Add sinusoidal positions at the input.
    pub positions: bool,
}

impl EncoderConfig {
    /// `d_ff = 4·d_model`, no dropout, positions only when there are layers.
    pub fn new(num_layers: usize, d_model: usize, num_heads: usize) -> Self {
        EncoderConfig {
            num_layers,
            d_model,
            num_heads,
            d_ff: 4 * d_model,
            dropout_rate: 0.0,
            positions: num_layers > 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_ff == 0 || self.num_heads == 0 {
            return Err(Error::InvalidConfig("encoder widths and head count must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.num_heads) {
            return Err(Error::InvalidConfig(format!(
                "{} heads do not divide d_model {}",
                self.num_heads, self.d_model
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if self.positions && !self.d_model.is_multiple_of(2) {
            return Err(Error::OddWidth(self.d_model));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout masks are drawn from streams derived from `seed`.
    Train { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
struct EncoderLayer {
    attn: SelfAttention,
    norm1: LayerNormSlot,
    ff1: LinearSlot,
    ff2: LinearSlot,
    norm2: LayerNormSlot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    cfg: EncoderConfig,
    layers: Vec<EncoderLayer>,
}

#[derive(Debug, Clone)]
struct LayerCache<F> {
    attn: AttentionCache<F>,
    attn_drop: Option<Vec<F>>,
    norm1: LayerNormCache<F>,
    normed1: Mat<F>,
    hidden: Mat<F>,
    activated: Mat<F>,
    ff_drop: Option<Vec<F>>,
    norm2: LayerNormCache<F>,
}

/// Per-item caches from a forward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache<F> {
    items: Vec<Vec<LayerCache<F>>>,
    masks: Vec<Vec<bool>>,
}

impl<F> EncoderCache<F> {
    /// Attention weights of `item`, per layer and head.
    pub fn attention_weights(&self, item: usize) -> Vec<&[Mat<F>]> {
        self.items[item].iter().map(|l| l.attn.weights()).collect()
    }
}

pub fn layer_prefix(layer: usize) -> String {
    format!("encoder.layers.{layer}")
}

fn dropout_mask<F: Real>(rate: f32, len: usize, stream: &mut Stream) -> Vec<F> {
    let keep = F::lit(1.0 / (1.0 - rate as f64));
    (0..len)
        .map(|_| if stream.uniform() < rate as f64 { F::zero() } else { keep })
        .collect()
}

fn apply_mask<F: Real>(m: &mut Mat<F>, mask: &[F]) {
    for (v, &k) in m.as_mut_slice().iter_mut().zip(mask) {
        *v *= k;
    }
}

impl Encoder {
    pub fn resolve<F: Real>(store: &ParamStore<F>, cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let (d, f) = (cfg.d_model, cfg.d_ff);
        let layers = (0..cfg.num_layers)
            .map(|l| {
                let p = layer_prefix(l);
                Ok(EncoderLayer {
                    attn: SelfAttention::resolve(store, &format!("{p}.attn"), d, cfg.num_heads)?,
                    norm1: LayerNormSlot::resolve(store, &format!("{p}.norm1"), d)?,
                    ff1: LinearSlot::resolve(store, &format!("{p}.ff1"), d, f)?,
                    ff2: LinearSlot::resolve(store, &format!("{p}.ff2"), f, d)?,
                    norm2: LayerNormSlot::resolve(store, &format!("{p}.norm2"), d)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Encoder { cfg: cfg.clone(), layers })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn forward<F: Real>(&self, values: &[F], x: &PaddedBatch<F>, mode: Mode) -> Result<(PaddedBatch<F>, EncoderCache<F>)> {
        x.validate(self.cfg.d_model)?;
        let pe = if self.cfg.positions {
            Some(sinusoidal_positions::<F>(x.max_frames(), self.cfg.d_model)?)
        } else {
            None
        };
        let mut outs = Vec::with_capacity(x.batch_size());
        let mut caches = Vec::with_capacity(x.batch_size());
        for (i, (item, mask)) in x.values.iter().zip(&x.frame_mask).enumerate() {
            let mut h = item.clone();
            if let Some(pe) = &pe {
                h.add_assign(pe);
            }
            zero_padded_rows(&mut h, mask);
            let mut item_caches = Vec::with_capacity(self.layers.len());
            for (l, layer) in self.layers.iter().enumerate() {
                let (out, cache) = self.layer_forward(layer, values, h, mask, mode, i, l)?;
                h = out;
                item_caches.push(cache);
            }
            outs.push(h);
            caches.push(item_caches);
        }
        Ok((
            x.with_values(outs),
            EncoderCache {
                items: caches,
                masks: x.frame_mask.clone(),
            },
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_forward<F: Real>(
        &self,
        layer: &EncoderLayer,
        values: &[F],
        x: Mat<F>,
        mask: &[bool],
        mode: Mode,
        item: usize,
        index: usize,
    ) -> Result<(Mat<F>, LayerCache<F>)> {
        let rate = self.cfg.dropout_rate;
        let mut stream = match mode {
            Mode::Train { seed } if rate > 0.0 => Some(Stream::new(seed, Purpose::Dropout, &[item as u64, index as u64])),
            _ => None,
        };

        let (mut a, attn) = layer.attn.forward(values, &x, mask)?;
        let attn_drop = stream.as_mut().map(|s| dropout_mask::<F>(rate, a.as_slice().len(), s));
        if let Some(m) = &attn_drop {
            apply_mask(&mut a, m);
        }
        a.add_assign(&x);
        let (normed1, norm1) = layer.norm1.forward(values, &a)?;

        let hidden = layer.ff1.forward(values, &normed1)?;
        let activated = hidden.map(|v| v.max(F::zero()));
        let mut f = layer.ff2.forward(values, &activated)?;
        let ff_drop = stream.as_mut().map(|s| dropout_mask::<F>(rate, f.as_slice().len(), s));
        if let Some(m) = &ff_drop {
            apply_mask(&mut f, m);
        }
        f.add_assign(&normed1);
        let (mut out, norm2) = layer.norm2.forward(values, &f)?;
        zero_padded_rows(&mut out, mask);
        Ok((
            out,
            LayerCache {
                attn,
                attn_drop,
                norm1,
                normed1,
                hidden,
                activated,
                ff_drop,
                norm2,
            },
        ))
    }

    /// Returns input gradients; accumulates parameter gradients into `grads`.
    pub fn backward<F: Real>(
        &self,
        values: &[F],
        grads: &mut [F],
        cache: &EncoderCache<F>,
        dy: &PaddedBatch<F>,
    ) -> Result<PaddedBatch<F>> {
        dy.validate(self.cfg.d_model)?;
        if dy.batch_size() != cache.items.len() {
            return Err(Error::ShapeMismatch("gradient batch differs from cached batch".into()));
        }
        let mut dxs = Vec::with_capacity(dy.batch_size());
        for ((g, item_cache), mask) in dy.values.iter().zip(&cache.items).zip(&cache.masks) {
            let mut d = g.clone();
            zero_padded_rows(&mut d, mask);
            for (layer, lc) in self.layers.iter().zip(item_cache).rev() {
                d = Self::layer_backward(layer, values, grads, lc, &d);
                zero_padded_rows(&mut d, mask);
            }
            dxs.push(d);
        }
        Ok(dy.with_values(dxs))
    }

    fn layer_backward<F: Real>(layer: &EncoderLayer, values: &[F], grads: &mut [F], lc: &LayerCache<F>, dy: &Mat<F>) -> Mat<F> {
        let dr2 = layer.norm2.backward(values, grads, &lc.norm2, dy);
        let mut df = dr2.clone();
        if let Some(m) = &lc.ff_drop {
            apply_mask(&mut df, m);
        }
        let mut dact = layer.ff2.backward(values, grads, &lc.activated, &df);
        for (g, &h) in dact.as_mut_slice().iter_mut().zip(lc.hidden.as_slice()) {
            if h <= F::zero() {
                *g = F::zero();
            }
        }
        let mut dn1 = layer.ff1.backward(values, grads, &lc.normed1, &dact);
        dn1.add_assign(&dr2);
        let dr1 = layer.norm1.backward(values, grads, &lc.norm1, &dn1);
        let mut da = dr1.clone();
        if let Some(m) = &lc.attn_drop {
            apply_mask(&mut da, m);
        }
        let mut dx = layer.attn.backward(values, grads, &lc.attn, &da);
        dx.add_assign(&dr1);
        dx
    }
}

/// Runs the encoder stack stored in `params` over `x`.
pub fn encoder_forward<F: Real>(x: &PaddedBatch<F>, cfg: &EncoderConfig, params: &ParamStore<F>, train_mode: bool, seed: u64) -> Result<PaddedBatch<F>> {
    let enc = Encoder::resolve(params, cfg)?;
    let mode = if train_mode { Mode::Train { seed } } else { Mode::Eval };
    enc.forward(params.values(), x, mode).map(|(out, _)| out)
}
