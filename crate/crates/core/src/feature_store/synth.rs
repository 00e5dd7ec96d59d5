//! Synthetic stand-ins for complementary upstream models.
//!
//! Each model "knows" a subset of the alphabet: frames of a known character
//! carry a fixed per-(model, character) unit template plus noise; frames of any
//! other character carry one shared template plus noise, so that model cannot
//! tell those characters apart.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::format::{write_features, FeatureMatrix};
use super::manifest::{Manifest, UtteranceRecord};
use crate::error::{Error, Result};
use crate::rng::{Purpose, Stream};

pub const SYNTH_FRAME_STRIDE_MS: f32 = 20.0;
const UNINFORMATIVE_KEY: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Symbols are the first `alphabet_size` lowercase ASCII letters.
    pub alphabet_size: usize,
    pub num_models: usize,
    pub dims: Vec<usize>,
    pub frames_per_char: usize,
    pub noise_sigma: f64,
    /// Characters each model carries information about.
    pub informative_sets: Vec<String>,
    pub num_utterances: usize,
    pub utterance_len_range: (usize, usize),
    pub seed: u64,
    /// Defaults to `m0`, `m1`, ...
    pub model_tags: Vec<String>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            alphabet_size: 8,
            num_models: 2,
            dims: vec![16, 16],
            frames_per_char: 4,
            noise_sigma: 0.3,
            informative_sets: vec!["abcd".into(), "efgh".into()],
            num_utterances: 400,
            utterance_len_range: (3, 6),
            seed: 0,
            model_tags: Vec::new(),
        }
    }
}

impl SynthConfig {
    pub fn alphabet(&self) -> Vec<char> {
        (0..self.alphabet_size as u8).map(|i| (b'a' + i) as char).collect()
    }

    pub fn tags(&self) -> Vec<String> {
        if self.model_tags.is_empty() {
            (0..self.num_models).map(|m| format!("m{m}")).collect()
        } else {
            self.model_tags.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(2..=26).contains(&self.alphabet_size) {
            return bad(format!("alphabet_size {} outside 2..=26", self.alphabet_size));
        }
        if self.num_models == 0 {
            return bad("num_models must be at least 1".into());
        }
        if self.dims.len() != self.num_models || self.dims.contains(&0) {
            return bad(format!("dims {:?} must list {} positive widths", self.dims, self.num_models));
        }
        if self.frames_per_char == 0 {
            return bad("frames_per_char must be at least 1".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be a non-negative number", self.noise_sigma));
        }
        if self.num_utterances == 0 {
            return bad("num_utterances must be at least 1".into());
        }
        let (lo, hi) = self.utterance_len_range;
        if lo == 0 || lo > hi {
            return bad(format!("utterance_len_range ({lo}, {hi}) must satisfy 1 <= min <= max"));
        }
        let tags = self.tags();
        if tags.len() != self.num_models {
            return bad(format!("{} model tags for {} models", tags.len(), self.num_models));
        }
        if tags.iter().collect::<BTreeSet<_>>().len() != tags.len() || tags.iter().any(String::is_empty) {
            return bad("model tags must be unique and nonempty".into());
        }
        if self.informative_sets.len() != self.num_models {
            return bad(format!(
                "{} informative sets for {} models",
                self.informative_sets.len(),
                self.num_models
            ));
        }
        let alphabet = self.alphabet();
        let mut covered = BTreeSet::new();
        for (m, set) in self.informative_sets.iter().enumerate() {
            if set.is_empty() {
                return bad(format!("informative set of model {m} is empty"));
            }
            for c in set.chars() {
                if !alphabet.contains(&c) {
                    return bad(format!("informative set of model {m} has {c:?}, not in the alphabet"));
                }
                covered.insert(c);
            }
        }
        let uncovered: String = alphabet.iter().filter(|c| !covered.contains(c)).collect();
        if !uncovered.is_empty() {
            return bad(format!("characters not covered by any informative set: {uncovered:?}"));
        }
        Ok(())
    }
}

/// Which template each character segment drew from, per (utterance, model).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynthTrace {
    /// `segments[u][m][k]` is `Some(c)` when the k-th character used the
    /// template for `c`, `None` when it used the shared uninformative one.
    pub segments: Vec<Vec<Vec<Option<char>>>>,
}

fn unit_vector(stream: &mut Stream, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| stream.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Generates `cfg.num_utterances` utterances under `out_dir`, writing
/// `feats/<id>.<tag>.sslf` per model and `manifest.jsonl`.
pub fn synth_corpus(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    synth_corpus_traced(cfg, out_dir).map(|(m, _)| m)
}

pub fn synth_corpus_traced(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<(Manifest, SynthTrace)> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let feat_dir = out_dir.join("feats");
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;

    let alphabet = cfg.alphabet();
    let tags = cfg.tags();

    // templates[m][c] is Some(unit vector) for informative characters
    let templates: Vec<Vec<Option<Vec<f64>>>> = (0..cfg.num_models)
        .map(|m| {
            alphabet
                .iter()
                .enumerate()
                .map(|(ci, c)| {
                    cfg.informative_sets[m].contains(*c).then(|| {
                        let mut s = Stream::new(cfg.seed, Purpose::Template, &[m as u64, ci as u64]);
                        unit_vector(&mut s, cfg.dims[m])
                    })
                })
                .collect()
        })
        .collect();
    let shared: Vec<Vec<f64>> = (0..cfg.num_models)
        .map(|m| {
            let mut s = Stream::new(cfg.seed, Purpose::Template, &[m as u64, UNINFORMATIVE_KEY]);
            unit_vector(&mut s, cfg.dims[m])
        })
        .collect();

    let (lo, hi) = cfg.utterance_len_range;
    let mut records = Vec::with_capacity(cfg.num_utterances);
    let mut trace = SynthTrace::default();
    for u in 0..cfg.num_utterances {
        let id = format!("utt{u:05}");
        let mut ts = Stream::new(cfg.seed, Purpose::Transcript, &[u as u64]);
        let len = lo + ts.below(hi - lo + 1);
        let chars: Vec<usize> = (0..len).map(|_| ts.below(alphabet.len())).collect();
        let transcript: String = chars.iter().map(|&c| alphabet[c]).collect();

        let mut features = IndexMap::new();
        let mut utt_trace = Vec::with_capacity(cfg.num_models);
        for m in 0..cfg.num_models {
            let dim = cfg.dims[m];
            let mut noise = Stream::new(cfg.seed, Purpose::Noise, &[u as u64, m as u64]);
            let mut values = Vec::with_capacity(len * cfg.frames_per_char * dim);
            let mut segs = Vec::with_capacity(len);
            for &c in &chars {
                let (base, used) = match &templates[m][c] {
                    Some(t) => (t, Some(alphabet[c])),
                    None => (&shared[m], None),
                };
                segs.push(used);
                for _ in 0..cfg.frames_per_char {
                    for &b in base {
                        values.push((b + cfg.noise_sigma * noise.normal()) as f32);
                    }
                }
            }
            utt_trace.push(segs);
            let fm = FeatureMatrix::new(tags[m].clone(), dim, SYNTH_FRAME_STRIDE_MS, values)?;
            let rel = PathBuf::from("feats").join(format!("{id}.{}.sslf", tags[m]));
            write_features(out_dir.join(&rel), &fm)?;
            features.insert(tags[m].clone(), rel);
        }
        trace.segments.push(utt_trace);
        records.push(UtteranceRecord {
            id,
            transcript,
            features,
        });
    }
    let manifest = Manifest::new(out_dir, records)?;
    manifest.save(out_dir.join("manifest.jsonl"))?;
    Ok((manifest, trace))
}
