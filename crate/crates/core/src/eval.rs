//! Greedy decoding and WER/CER scoring.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ctc::greedy_decode;
use crate::error::{Error, Result};
use crate::feature_store::{Manifest, DEFAULT_ALIGN_TOLERANCE};
use crate::head::HeadModel;
use crate::nn::load_checkpoint;
use crate::trainer::load_aligned;

/// Edit operations of one alignment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WerBreakdown {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_tokens: usize,
    /// `(S + I + D) / ref_tokens`; may exceed 1.
    pub error_rate: f64,
}

impl WerBreakdown {
    pub fn new(counts: EditCounts, ref_tokens: usize) -> Result<Self> {
        if ref_tokens == 0 {
            return Err(Error::EmptyReference);
        }
        Ok(WerBreakdown {
            substitutions: counts.substitutions,
            insertions: counts.insertions,
            deletions: counts.deletions,
            ref_tokens,
            error_rate: counts.total() as f64 / ref_tokens as f64,
        })
    }

    pub fn edits(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

/// Minimal unit-cost alignment of `hyp` against `reference`. The backtrace
/// prefers match or substitution, then deletion, then insertion.
pub fn align_counts<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for (j, cell) in d[..w].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        d[i * w] = i;
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut counts = EditCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let differs = reference[i - 1] != hyp[j - 1];
            if here == d[(i - 1) * w + j - 1] + usize::from(differs) {
                counts.substitutions += usize::from(differs);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * w + j] + 1 {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

pub fn edit_distance<T: PartialEq>(reference: &[T], hyp: &[T]) -> Result<WerBreakdown> {
    WerBreakdown::new(align_counts(reference, hyp), reference.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    Word,
    Char,
}

/// Words split on single spaces, or characters including spaces.
pub fn tokenize(text: &str, unit: Unit) -> Vec<String> {
    match unit {
        Unit::Word if text.is_empty() => Vec::new(),
        Unit::Word => text.split(' ').map(str::to_string).collect(),
        Unit::Char => text.chars().map(String::from).collect(),
    }
}

/// Corpus-level rate: total edits over total reference tokens.
pub fn score_corpus<S: AsRef<str>>(pairs: &[(S, S)], unit: Unit) -> Result<WerBreakdown> {
    let mut total = EditCounts::default();
    let mut ref_tokens = 0;
    for (r, h) in pairs {
        let r = tokenize(r.as_ref(), unit);
        let c = align_counts(&r, &tokenize(h.as_ref(), unit));
        total.substitutions += c.substitutions;
        total.insertions += c.insertions;
        total.deletions += c.deletions;
        ref_tokens += r.len();
    }
    WerBreakdown::new(total, ref_tokens)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub id: String,
    pub hypothesis: String,
    pub reference: String,
    /// Word-level breakdown; `None` for an empty reference.
    pub breakdown: Option<WerBreakdown>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub results: Vec<DecodeResult>,
    pub wer: WerBreakdown,
    pub cer: WerBreakdown,
}

impl fmt::Display for EvalReport {
    /// `WER <percent> CER <percent> S <n> I <n> D <n> N <n>`, counts at word level.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "WER {:.2} CER {:.2} S {} I {} D {} N {}",
            100.0 * self.wer.error_rate,
            100.0 * self.cer.error_rate,
            self.wer.substitutions,
            self.wer.insertions,
            self.wer.deletions,
            self.wer.ref_tokens
        )
    }
}

/// Decodes every record with `model` and scores the corpus.
pub fn evaluate_head(manifest: &Manifest, model: &HeadModel<f32>) -> Result<EvalReport> {
    let cfg = model.config();
    manifest.require_tags(&cfg.model_tags)?;
    let mut results = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        let features = load_aligned::<f32>(manifest, r, &cfg.model_tags, DEFAULT_ALIGN_TOLERANCE)?;
        let hypothesis = greedy_decode(&model.log_probs(&features)?, &cfg.vocab)?;
        let breakdown = edit_distance(&tokenize(&r.transcript, Unit::Word), &tokenize(&hypothesis, Unit::Word)).ok();
        results.push(DecodeResult {
            id: r.id.clone(),
            hypothesis,
            reference: r.transcript.clone(),
            breakdown,
        });
    }
    let pairs: Vec<(&str, &str)> = results.iter().map(|d| (d.reference.as_str(), d.hypothesis.as_str())).collect();
    Ok(EvalReport {
        wer: score_corpus(&pairs, Unit::Word)?,
        cer: score_corpus(&pairs, Unit::Char)?,
        results,
    })
}

pub fn evaluate(manifest: &Manifest, checkpoint: &Path) -> Result<EvalReport> {
    let (cfg, store) = load_checkpoint(checkpoint)?;
    evaluate_head(manifest, &HeadModel::new(cfg, store)?)
}

#[derive(Serialize)]
struct HypLine<'a> {
    id: &'a str,
    #[serde(rename = "ref")]
    reference: &'a str,
    hyp: &'a str,
    wer: Option<f64>,
}

/// One JSON object per result: `{"id", "ref", "hyp", "wer"}`.
pub fn write_hypotheses(path: &Path, results: &[DecodeResult]) -> Result<()> {
    let mut out = String::new();
    for d in results {
        let line = HypLine {
            id: &d.id,
            reference: &d.reference,
            hyp: &d.hypothesis,
            wer: d.breakdown.map(|b| b.error_rate),
        };
        out.push_str(&serde_json::to_string(&line).map_err(|e| Error::InvalidConfig(e.to_string()))?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
