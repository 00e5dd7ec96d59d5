//! The trainable head: combiner, input projection, encoder stack and CTC layer.

use std::ops::Range;

use crate::combiners::{combine, combine_backward, CombinerKind, CombinerParams};
use crate::ctc::{ctc_loss_grad, LogProbMatrix};
use crate::error::{Error, Result};
use crate::nn::{init_params, Encoder, HeadConfig, LinearSlot, Mode, PaddedBatch, ParamStore};
use crate::tensor::{Mat, Real};

/// One utterance: aligned per-model features (in `model_tags` order) and
/// its CTC target.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadItem<F> {
    pub features: Vec<Mat<F>>,
    pub target: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss<F> {
    /// Mean of the per-utterance losses.
    pub loss: F,
    pub per_item: Vec<F>,
}

#[derive(Debug, Clone, PartialEq)]
enum CombinerSlots {
    Fixed,
    Weighted(Range<usize>),
    Attention { proj: Vec<Range<usize>>, query: Range<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadModel<F> {
    cfg: HeadConfig,
    store: ParamStore<F>,
    combiner: CombinerSlots,
    input_proj: LinearSlot,
    encoder: Encoder,
    ctc: LinearSlot,
}

impl<F: Real> HeadModel<F> {
    pub fn new(cfg: HeadConfig, store: ParamStore<F>) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.input_dims.len();
        let combiner = match cfg.combiner {
            CombinerKind::Concat | CombinerKind::Sum => CombinerSlots::Fixed,
            CombinerKind::WeightedAverage => CombinerSlots::Weighted(store.slot("combiner.mix_logits", &[n])?),
            CombinerKind::AttentionMix => CombinerSlots::Attention {
                proj: cfg
                    .input_dims
                    .iter()
                    .enumerate()
                    .map(|(m, &d)| store.slot(&format!("combiner.proj.{m}"), &[d, cfg.d_c]))
                    .collect::<Result<_>>()?,
                query: store.slot("combiner.query", &[cfg.d_c])?,
            },
        };
        let d = cfg.encoder.d_model;
        let input_proj = LinearSlot::resolve(&store, "input_proj", cfg.combined_dim()?, d)?;
        let encoder = Encoder::resolve(&store, &cfg.encoder)?;
        let ctc = LinearSlot::resolve(&store, "ctc", d, cfg.vocab.len())?;
        Ok(HeadModel {
            cfg,
            store,
            combiner,
            input_proj,
            encoder,
            ctc,
        })
    }

    /// Fresh head with seeded initialization.
    pub fn init(cfg: HeadConfig, seed: u64) -> Result<Self> {
        let store = init_params(&cfg, seed)?;
        Self::new(cfg, store)
    }

    pub fn config(&self) -> &HeadConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore<F> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.store
    }

    pub fn into_store(self) -> ParamStore<F> {
        self.store
    }

    /// Combiner parameters as currently stored.
    pub fn combiner_params(&self) -> Result<CombinerParams<F>> {
        let v = self.store.values();
        Ok(match &self.combiner {
            CombinerSlots::Fixed if self.cfg.combiner == CombinerKind::Concat => CombinerParams::concat(),
            CombinerSlots::Fixed => CombinerParams::sum(),
            CombinerSlots::Weighted(r) => CombinerParams::weighted(v[r.clone()].to_vec()),
            CombinerSlots::Attention { proj, query } => CombinerParams::attention(
                proj.iter()
                    .zip(&self.cfg.input_dims)
                    .map(|(r, &d)| Mat::from_vec(d, self.cfg.d_c, v[r.clone()].to_vec()))
                    .collect::<Result<_>>()?,
                v[query.clone()].to_vec(),
            ),
        })
    }

    fn check_features(&self, features: &[Mat<F>]) -> Result<()> {
        let widths: Vec<usize> = features.iter().map(Mat::cols).collect();
        if widths != self.cfg.input_dims {
            return Err(Error::DimMismatch(format!(
                "feature widths {widths:?}, head expects {:?}",
                self.cfg.input_dims
            )));
        }
        Ok(())
    }

    /// Combined and projected features of one item, `frames × d_model`.
    fn embed(&self, params: &CombinerParams<F>, features: &[Mat<F>]) -> Result<(Mat<F>, Mat<F>)> {
        self.check_features(features)?;
        let combined = combine(features, params)?;
        let projected = self.input_proj.forward(self.store.values(), &combined)?;
        Ok((combined, projected))
    }

    /// Per-frame log-probabilities for one utterance in inference mode.
    pub fn log_probs(&self, features: &[Mat<F>]) -> Result<LogProbMatrix<F>> {
        let params = self.combiner_params()?;
        let (_, projected) = self.embed(&params, features)?;
        let batch = PaddedBatch::from_items(&[projected], 0)?;
        let (encoded, _) = self.encoder.forward(self.store.values(), &batch, Mode::Eval)?;
        let logits = self.ctc.forward(self.store.values(), &encoded.unpadded(0))?;
        Ok(LogProbMatrix::from_logits(&logits))
    }

    /// Mean CTC loss over `items`, without gradients.
    pub fn loss(&self, items: &[HeadItem<F>], mode: Mode, pad_to: usize) -> Result<BatchLoss<F>> {
        let mut scratch = self.clone();
        scratch.store.zero_grads();
        scratch.loss_and_grad(items, mode, pad_to)
    }

    /// Mean CTC loss over `items`; parameter gradients of that mean are
    /// added to the store's gradient buffer. The batch is padded to at least
    /// `pad_to` frames.
    pub fn loss_and_grad(&mut self, items: &[HeadItem<F>], mode: Mode, pad_to: usize) -> Result<BatchLoss<F>> {
        if items.is_empty() {
            return Err(Error::EmptyInput);
        }
        let params = self.combiner_params()?;
        let mut combined = Vec::with_capacity(items.len());
        let mut projected = Vec::with_capacity(items.len());
        for item in items {
            let (c, p) = self.embed(&params, &item.features)?;
            combined.push(c);
            projected.push(p);
        }
        let batch = PaddedBatch::from_items(&projected, pad_to)?;
        drop(projected);

        let (values, grads) = self.store.values_and_grads_mut();
        let values: &[F] = values;
        let (encoded, cache) = self.encoder.forward(values, &batch, mode)?;

        let scale = F::one() / F::lit(items.len() as f64);
        let mut per_item = Vec::with_capacity(items.len());
        let mut d_encoded = Vec::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            let h = encoded.unpadded(i);
            let logits = self.ctc.forward(values, &h)?;
            let res = ctc_loss_grad(&logits, &item.target)?;
            per_item.push(res.loss);
            let dlogits = res.grad_logits.map(|g| g * scale);
            let dh = self.ctc.backward(values, grads, &h, &dlogits);
            d_encoded.push(dh.resized_rows(batch.max_frames()));
        }
        let d_inputs = self.encoder.backward(values, grads, &cache, &batch.with_values(d_encoded))?;

        for (i, (item, c)) in items.iter().zip(&combined).enumerate() {
            let dp = d_inputs.unpadded(i);
            let dc = self.input_proj.backward(values, grads, c, &dp);
            if self.cfg.combiner.is_learnable() {
                let g = combine_backward(&item.features, &params, &dc)?;
                match &self.combiner {
                    CombinerSlots::Weighted(r) => accumulate(&mut grads[r.clone()], &g.mix_logits),
                    CombinerSlots::Attention { proj, query } => {
                        for (r, dp) in proj.iter().zip(&g.attn_proj) {
                            accumulate(&mut grads[r.clone()], dp.as_slice());
                        }
                        accumulate(&mut grads[query.clone()], &g.query);
                    }
                    CombinerSlots::Fixed => {}
                }
            }
        }

        let loss = per_item.iter().copied().sum::<F>() * scale;
        Ok(BatchLoss { loss, per_item })
    }
}

fn accumulate<F: Real>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
