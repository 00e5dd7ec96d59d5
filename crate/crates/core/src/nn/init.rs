use super::encoder::{layer_prefix, EncoderConfig};
use super::params::ParamStore;
use crate::combiners::CombinerKind;
use crate::ctc::Vocab;
use crate::error::{Error, Result};
use crate::rng::{Purpose, Stream};
use crate::tensor::Real;

/// Everything needed to rebuild a head besides its parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    pub encoder: EncoderConfig,
    pub combiner: CombinerKind,
    /// Common width for attention mixing; ignored by other combiners.
    pub d_c: usize,
    pub vocab: Vocab,
    /// Upstream models in combination order.
    pub model_tags: Vec<String>,
    /// Embedding width per model, same order as `model_tags`.
    pub input_dims: Vec<usize>,
}

impl HeadConfig {
    pub fn combined_dim(&self) -> Result<usize> {
        self.combiner.output_dim(&self.input_dims, self.d_c)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.model_tags.is_empty() {
            return Err(Error::InvalidConfig("at least one model tag is required".into()));
        }
        if self.model_tags.len() != self.input_dims.len() {
            return Err(Error::InvalidConfig(format!(
                "{} model tags but {} input widths",
                self.model_tags.len(),
                self.input_dims.len()
            )));
        }
        if self.input_dims.contains(&0) {
            return Err(Error::InvalidConfig("input widths must be positive".into()));
        }
        self.combined_dim().map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

/// Parameter names, shapes and initializers in store order.
pub fn param_layout(cfg: &HeadConfig) -> Result<Vec<(String, Vec<usize>, Init)>> {
    cfg.validate()?;
    let mut out = Vec::new();
    let linear = |out: &mut Vec<_>, name: &str, i: usize, o: usize| {
        out.push((format!("{name}.weight"), vec![i, o], Init::Xavier { fan_in: i, fan_out: o }));
        out.push((format!("{name}.bias"), vec![o], Init::Zeros));
    };
    let norm = |out: &mut Vec<_>, name: &str, d: usize| {
        out.push((format!("{name}.gain"), vec![d], Init::Ones));
        out.push((format!("{name}.shift"), vec![d], Init::Zeros));
    };

    match cfg.combiner {
        CombinerKind::WeightedAverage => {
            out.push(("combiner.mix_logits".into(), vec![cfg.input_dims.len()], Init::Zeros));
        }
        CombinerKind::AttentionMix => {
            for (m, &d) in cfg.input_dims.iter().enumerate() {
                out.push((
                    format!("combiner.proj.{m}"),
                    vec![d, cfg.d_c],
                    Init::Xavier { fan_in: d, fan_out: cfg.d_c },
                ));
            }
            out.push(("combiner.query".into(), vec![cfg.d_c], Init::Xavier { fan_in: cfg.d_c, fan_out: 1 }));
        }
        CombinerKind::Concat | CombinerKind::Sum => {}
    }

    let d = cfg.encoder.d_model;
    linear(&mut out, "input_proj", cfg.combined_dim()?, d);
    for l in 0..cfg.encoder.num_layers {
        let p = layer_prefix(l);
        for role in ["q", "k", "v", "o"] {
            linear(&mut out, &format!("{p}.attn.{role}"), d, d);
        }
        norm(&mut out, &format!("{p}.norm1"), d);
        linear(&mut out, &format!("{p}.ff1"), d, cfg.encoder.d_ff);
        linear(&mut out, &format!("{p}.ff2"), cfg.encoder.d_ff, d);
        norm(&mut out, &format!("{p}.norm2"), d);
    }
    linear(&mut out, "ctc", d, cfg.vocab.len());
    Ok(out)
}

/// Seeded initialization: Xavier-uniform weights, zero biases and shifts,
/// unit layer-norm gains. Each parameter draws from its own stream.
pub fn init_params<F: Real>(cfg: &HeadConfig, seed: u64) -> Result<ParamStore<F>> {
    let mut store = ParamStore::new();
    for (idx, (name, shape, init)) in param_layout(cfg)?.into_iter().enumerate() {
        let n: usize = shape.iter().product();
        let values = match init {
            Init::Zeros => vec![F::zero(); n],
            Init::Ones => vec![F::one(); n],
            Init::Xavier { fan_in, fan_out } => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut s = Stream::new(seed, Purpose::Init, &[idx as u64]);
                (0..n).map(|_| F::lit(s.uniform_range(-bound, bound))).collect()
            }
        };
        store.add(name, &shape, values)?;
    }
    Ok(store)
}
