//! Connectionist Temporal Classification.
//!
//! The loss runs the forward recursion over the blank-interleaved target
//! (length `2L + 1`) in log space; the gradient with respect to the
//! pre-softmax logits is `softmax − occupancy`, where occupancy is the
//! forward–backward posterior of each symbol at each frame.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{log_add, log_sum_exp, Mat, Real};

pub const BLANK: usize = 0;
/// Rendering of the blank symbol; it never appears in transcripts.
pub const BLANK_CHAR: char = '\u{2205}';

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    symbols: Vec<char>,
    lookup: HashMap<char, usize>,
}

impl Vocab {
    /// Builds a vocabulary from the non-blank symbols; blank takes index 0.
    pub fn new(symbols: impl IntoIterator<Item = char>) -> Result<Self> {
        let mut all = vec![BLANK_CHAR];
        let mut lookup = HashMap::new();
        for c in symbols {
            if c == BLANK_CHAR {
                return Err(Error::InvalidConfig("blank symbol listed as a label".into()));
            }
            if lookup.insert(c, all.len()).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate vocabulary symbol {c:?}")));
            }
            all.push(c);
        }
        if all.len() < 2 {
            return Err(Error::InvalidConfig("vocabulary needs at least one label".into()));
        }
        Ok(Vocab { symbols: all, lookup })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    /// The labels without the blank, as a string.
    pub fn labels(&self) -> String {
        self.symbols[1..].iter().collect()
    }

    pub fn index(&self, c: char) -> Result<usize> {
        self.lookup.get(&c).copied().ok_or(Error::UnknownSymbol(c))
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars().map(|c| self.index(c)).collect()
    }

    pub fn decode(&self, labels: &[usize]) -> Result<String> {
        labels
            .iter()
            .map(|&i| match i {
                BLANK => Err(Error::InvalidConfig("blank inside a label sequence".into())),
                i if i < self.symbols.len() => Ok(self.symbols[i]),
                i => Err(Error::IndexOutOfRange { index: i, size: self.symbols.len() }),
            })
            .collect()
    }
}

/// Rows of normalized log-probabilities, `T × V`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbMatrix<F> {
    entries: Mat<F>,
}

impl<F: Real> LogProbMatrix<F> {
    pub fn new(entries: Mat<F>) -> Result<Self> {
        for t in 0..entries.rows() {
            let lse = log_sum_exp(entries.row(t)).as_f64();
            if !(lse.abs() <= 1e-5) {
                return Err(Error::UnnormalizedInput { row: t, logsumexp: lse });
            }
        }
        Ok(LogProbMatrix { entries })
    }

    pub fn from_logits(logits: &Mat<F>) -> Self {
        LogProbMatrix {
            entries: log_softmax(logits),
        }
    }

    pub fn frames(&self) -> usize {
        self.entries.rows()
    }

    pub fn vocab_size(&self) -> usize {
        self.entries.cols()
    }

    pub fn entries(&self) -> &Mat<F> {
        &self.entries
    }
}

pub fn log_softmax<F: Real>(logits: &Mat<F>) -> Mat<F> {
    let mut out = logits.clone();
    for t in 0..out.rows() {
        let row = out.row_mut(t);
        let lse = log_sum_exp(row);
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

/// Removes consecutive duplicates, then blanks.
pub fn collapse(path: &[usize], vocab_size: usize) -> Result<Vec<usize>> {
    if let Some(&bad) = path.iter().find(|&&i| i >= vocab_size) {
        return Err(Error::IndexOutOfRange { index: bad, size: vocab_size });
    }
    let mut out = Vec::new();
    let mut prev = None;
    for &s in path {
        if prev != Some(s) && s != BLANK {
            out.push(s);
        }
        prev = Some(s);
    }
    Ok(out)
}

/// Frames needed to emit `target`: one per label plus a blank between repeats.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtcResult<F> {
    /// Negative log-likelihood, natural log.
    pub loss: F,
    /// Gradient with respect to the pre-softmax logits, `T × V`.
    pub grad_logits: Mat<F>,
}

fn check_target(target: &[usize], vocab_size: usize, frames: usize) -> Result<()> {
    for &s in target {
        if s == BLANK {
            return Err(Error::InvalidConfig("blank inside a CTC target".into()));
        }
        if s >= vocab_size {
            return Err(Error::IndexOutOfRange { index: s, size: vocab_size });
        }
    }
    let required = min_frames(target);
    if frames < required {
        return Err(Error::InfeasibleTarget { required, available: frames });
    }
    Ok(())
}

/// CTC loss and logit gradient for one utterance.
pub fn ctc_loss_grad<F: Real>(logits: &Mat<F>, target: &[usize]) -> Result<CtcResult<F>> {
    let (frames, vocab_size) = logits.shape();
    check_target(target, vocab_size, frames)?;
    let logp = log_softmax(logits);
    if frames == 0 {
        return Ok(CtcResult {
            loss: F::zero(),
            grad_logits: Mat::zeros(0, vocab_size),
        });
    }

    let ext: Vec<usize> = std::iter::once(BLANK)
        .chain(target.iter().flat_map(|&s| [s, BLANK]))
        .collect();
    let s_len = ext.len();
    // label at s may be reached from s-2 (skipping a blank)
    let can_skip: Vec<bool> = (0..s_len)
        .map(|s| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2])
        .collect();
    let ninf = F::neg_infinity();

    let mut alpha = Mat::from_vec(frames, s_len, vec![ninf; frames * s_len])?;
    alpha.set(0, 0, logp.get(0, ext[0]));
    if s_len > 1 {
        alpha.set(0, 1, logp.get(0, ext[1]));
    }
    for t in 1..frames {
        for s in 0..s_len {
            let mut a = alpha.get(t - 1, s);
            if s >= 1 {
                a = log_add(a, alpha.get(t - 1, s - 1));
            }
            if can_skip[s] {
                a = log_add(a, alpha.get(t - 1, s - 2));
            }
            if a != ninf {
                alpha.set(t, s, a + logp.get(t, ext[s]));
            }
        }
    }

    let mut beta = Mat::from_vec(frames, s_len, vec![ninf; frames * s_len])?;
    let last = frames - 1;
    beta.set(last, s_len - 1, logp.get(last, ext[s_len - 1]));
    if s_len > 1 {
        beta.set(last, s_len - 2, logp.get(last, ext[s_len - 2]));
    }
    for t in (0..last).rev() {
        for s in 0..s_len {
            let mut b = beta.get(t + 1, s);
            if s + 1 < s_len {
                b = log_add(b, beta.get(t + 1, s + 1));
            }
            if s + 2 < s_len && can_skip[s + 2] {
                b = log_add(b, beta.get(t + 1, s + 2));
            }
            if b != ninf {
                beta.set(t, s, b + logp.get(t, ext[s]));
            }
        }
    }

    let mut log_lik = alpha.get(last, s_len - 1);
    if s_len > 1 {
        log_lik = log_add(log_lik, alpha.get(last, s_len - 2));
    }
    if log_lik == ninf {
        // feasible but every admissible path has probability zero
        return Ok(CtcResult {
            loss: F::infinity(),
            grad_logits: Mat::zeros(frames, vocab_size),
        });
    }

    let mut grad = Mat::zeros(frames, vocab_size);
    let mut occ = vec![ninf; vocab_size];
    for t in 0..frames {
        occ.iter_mut().for_each(|o| *o = ninf);
        for s in 0..s_len {
            let ab = alpha.get(t, s) + beta.get(t, s);
            if ab != ninf {
                occ[ext[s]] = log_add(occ[ext[s]], ab);
            }
        }
        let g = grad.row_mut(t);
        let lp = logp.row(t);
        for k in 0..vocab_size {
            let post = if occ[k] == ninf {
                F::zero()
            } else {
                (occ[k] - lp[k] - log_lik).exp()
            };
            g[k] = lp[k].exp() - post;
        }
    }
    Ok(CtcResult {
        loss: -log_lik,
        grad_logits: grad,
    })
}

/// Loss for a transcript, encoded through `vocab`.
pub fn ctc_loss_for_text<F: Real>(logits: &Mat<F>, transcript: &str, vocab: &Vocab) -> Result<CtcResult<F>> {
    if logits.cols() != vocab.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logit columns for a {}-symbol vocabulary",
            logits.cols(),
            vocab.len()
        )));
    }
    ctc_loss_grad(logits, &vocab.encode(transcript)?)
}

/// Exhaustive sum over all `V^T` paths that collapse to `target`.
/// Intended as an oracle for small instances (`T ≤ 8`, `V ≤ 5`).
pub fn ctc_brute_force(probs: &Mat<f64>, target: &[usize]) -> Result<f64> {
    let (frames, vocab_size) = probs.shape();
    if frames > 8 || vocab_size > 5 {
        return Err(Error::InstanceTooLarge(format!("T={frames}, V={vocab_size}")));
    }
    for t in 0..frames {
        let s: f64 = probs.row(t).iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::UnnormalizedInput { row: t, logsumexp: s.ln() });
        }
    }
    let mut path = vec![0usize; frames];
    let mut total = 0.0;
    loop {
        if collapse(&path, vocab_size)? == target {
            total += path.iter().enumerate().map(|(t, &k)| probs.get(t, k)).product::<f64>();
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == frames {
                return Ok(total);
            }
            path[i] += 1;
            if path[i] < vocab_size {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

/// Per-frame argmax with ties to the lowest index, collapsed.
pub fn best_path<F: Real>(scores: &Mat<F>) -> Vec<usize> {
    let path: Vec<usize> = (0..scores.rows())
        .map(|t| {
            let row = scores.row(t);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    collapse(&path, scores.cols()).expect("argmax indices are in range")
}

pub fn greedy_decode<F: Real>(logprobs: &LogProbMatrix<F>, vocab: &Vocab) -> Result<String> {
    if logprobs.vocab_size() != vocab.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} log-prob columns for a {}-symbol vocabulary",
            logprobs.vocab_size(),
            vocab.len()
        )));
    }
    vocab.decode(&best_path(logprobs.entries()))
}
