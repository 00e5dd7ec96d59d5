//! Head training on frozen features.

mod adam;
mod batching;

pub use adam::{adam_step, clip_gradients, AdamHyper, AdamState};
pub use batching::{make_batches, BatchPlan};

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::combiners::CombinerKind;
use crate::ctc::{min_frames, Vocab};
use crate::error::{Error, Infeasible, Result};
use crate::feature_store::{align_frames, Manifest, UtteranceRecord, DEFAULT_ALIGN_TOLERANCE};
use crate::head::{HeadItem, HeadModel};
use crate::nn::{save_checkpoint, EncoderConfig, HeadConfig, Mode};
use crate::rng::{Purpose, Stream};
use crate::tensor::{Mat, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Upstream models to ensemble, in combination order.
    pub model_tags: Vec<String>,
    pub combiner: CombinerKind,
    /// Common width for attention mixing.
    pub d_c: usize,
    pub num_layers: usize,
    pub d_model: usize,
    pub num_heads: usize,
    /// Feed-forward width; `4 · d_model` when unset.
    pub d_ff: Option<usize>,
    pub dropout: f32,
    /// Sinusoidal positions; on exactly when there are encoder layers if unset.
    pub positions: Option<bool>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub sort_by_length: bool,
    pub align_tolerance: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model_tags: Vec::new(),
            combiner: CombinerKind::Concat,
            d_c: 32,
            num_layers: 2,
            d_model: 32,
            num_heads: 4,
            d_ff: None,
            dropout: 0.0,
            positions: None,
            epochs: 20,
            batch_size: 8,
            learning_rate: 1e-3,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            clip_norm: Some(5.0),
            seed: 0,
            sort_by_length: true,
            align_tolerance: DEFAULT_ALIGN_TOLERANCE,
        }
    }
}

impl TrainConfig {
    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            num_layers: self.num_layers,
            d_model: self.d_model,
            num_heads: self.num_heads,
            d_ff: self.d_ff.unwrap_or(4 * self.d_model),
            dropout_rate: self.dropout,
            positions: self.positions.unwrap_or(self.num_layers > 0),
        }
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.adam_betas.0,
            beta2: self.adam_betas.1,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_tags.is_empty() {
            return Err(Error::InvalidConfig("no model tags selected".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.adam_eps > 0.0) {
            return Err(Error::InvalidConfig("learning rate and adam eps must be positive".into()));
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::InvalidConfig(format!("adam betas {b1}, {b2} outside [0, 1)")));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::InvalidConfig(format!("clip norm {c} must be positive")));
            }
        }
        self.encoder().validate()
    }
}

/// Blank plus the distinct transcript characters in code-point order.
pub fn build_vocab(manifest: &Manifest) -> Result<Vocab> {
    if manifest.records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let chars: BTreeSet<char> = manifest.records.iter().flat_map(|r| r.transcript.chars()).collect();
    if chars.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Vocab::new(chars)
}

/// Loads the features of `record` for `tags` and trims them to a common length.
pub fn load_aligned<F: Real>(manifest: &Manifest, record: &UtteranceRecord, tags: &[String], tolerance: usize) -> Result<Vec<Mat<F>>> {
    let mats = manifest.load_features(record, tags)?;
    Ok(align_frames(&mats, tolerance)?.iter().map(|m| m.to_mat()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    /// Wall-clock seconds per epoch.
    pub epoch_seconds: Vec<f64>,
    pub checkpoint: Option<PathBuf>,
    pub config: TrainConfig,
    pub vocab: String,
}

/// Record written next to a checkpoint as `<checkpoint>.json`.
#[derive(Serialize)]
struct Sidecar<'a> {
    config: &'a TrainConfig,
    vocab: String,
    epoch_losses: &'a [f64],
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Loads every training utterance, checks the CTC length bound up front and
/// returns the head configuration implied by the data.
fn prepare(manifest: &Manifest, cfg: &TrainConfig) -> Result<(HeadConfig, Vec<HeadItem<f32>>)> {
    cfg.validate()?;
    manifest.require_tags(&cfg.model_tags)?;
    let vocab = build_vocab(manifest)?;
    let mut items = Vec::with_capacity(manifest.records.len());
    let mut infeasible = Vec::new();
    let mut input_dims: Option<Vec<usize>> = None;
    for r in &manifest.records {
        let features = load_aligned::<f32>(manifest, r, &cfg.model_tags, cfg.align_tolerance)?;
        let dims: Vec<usize> = features.iter().map(Mat::cols).collect();
        match &input_dims {
            None => input_dims = Some(dims),
            Some(d) if *d != dims => {
                return Err(Error::DimMismatch(format!("record {:?} has widths {dims:?}, expected {d:?}", r.id)));
            }
            Some(_) => {}
        }
        let target = vocab.encode(&r.transcript)?;
        let available = features[0].rows();
        let required = min_frames(&target);
        if available < required {
            infeasible.push(Infeasible {
                id: r.id.clone(),
                required,
                available,
            });
        }
        items.push(HeadItem { features, target });
    }
    if !infeasible.is_empty() {
        return Err(Error::InfeasibleUtterances(infeasible));
    }
    let head = HeadConfig {
        encoder: cfg.encoder(),
        combiner: cfg.combiner,
        d_c: cfg.d_c,
        vocab,
        model_tags: cfg.model_tags.clone(),
        input_dims: input_dims.unwrap_or_default(),
    };
    head.validate()?;
    Ok((head, items))
}

/// Trains a head in memory. Log lines `epoch <k> loss <v> seconds <s>` go to `log`.
pub fn train_head(manifest: &Manifest, cfg: &TrainConfig, log: &mut dyn Write) -> Result<(HeadModel<f32>, TrainReport)> {
    let (head_cfg, items) = prepare(manifest, cfg)?;
    let mut model = HeadModel::<f32>::init(head_cfg, cfg.seed)?;
    let hyper = cfg.adam();
    let mut state = AdamState::new(model.store().num_values());
    let lengths: Vec<usize> = items.iter().map(|it| it.features[0].rows()).collect();
    let mut report = TrainReport {
        epoch_losses: Vec::with_capacity(cfg.epochs),
        epoch_seconds: Vec::with_capacity(cfg.epochs),
        checkpoint: None,
        config: cfg.clone(),
        vocab: model.config().vocab.labels(),
    };

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut total = 0.0f64;
        for (b, plan) in make_batches(&lengths, cfg.batch_size, cfg.sort_by_length, cfg.seed, epoch)
            .iter()
            .enumerate()
        {
            let batch: Vec<HeadItem<f32>> = plan.indices.iter().map(|&i| items[i].clone()).collect();
            let mode = Mode::Train {
                seed: Stream::new(cfg.seed, Purpose::Dropout, &[epoch as u64, b as u64]).next_u64(),
            };
            let store = model.store_mut();
            store.zero_grads();
            let loss = model.loss_and_grad(&batch, mode, 0)?;
            if !loss.loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch: epoch + 1, batch: b });
            }
            total += loss.per_item.iter().map(|&l| l as f64).sum::<f64>();
            let (values, grads) = model.store_mut().values_and_grads_mut();
            if let Some(c) = cfg.clip_norm {
                clip_gradients(grads, c);
            }
            adam_step(values, grads, &mut state, &hyper)?;
        }
        let mean = total / items.len() as f64;
        let seconds = started.elapsed().as_secs_f64();
        writeln!(log, "epoch {} loss {mean:.6} seconds {seconds:.3}", epoch + 1).map_err(|e| Error::io("training log", e))?;
        report.epoch_losses.push(mean);
        report.epoch_seconds.push(seconds);
    }
    Ok((model, report))
}

/// Trains, writes the checkpoint and its `<checkpoint>.json` config record.
pub fn train(manifest: &Manifest, cfg: &TrainConfig, checkpoint: &Path, log: &mut dyn Write) -> Result<TrainReport> {
    let (model, mut report) = train_head(manifest, cfg, log)?;
    save_checkpoint(checkpoint, model.config(), model.store())?;
    let sidecar = Sidecar {
        config: cfg,
        vocab: report.vocab.clone(),
        epoch_losses: &report.epoch_losses,
    };
    let path = sidecar_path(checkpoint);
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    report.checkpoint = Some(checkpoint.to_path_buf());
    Ok(report)
}
