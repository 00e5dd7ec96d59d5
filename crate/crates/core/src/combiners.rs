//! Frame-wise fusion of aligned multi-model features.
//!
//! * `Concat`: frame t is the concatenation of every model's frame t.
//! * `Sum`: elementwise sum (equal widths).
//! * `WeightedAverage`: `Σ_m softmax(mix_logits)_m · x_m` (equal widths).
//! * `AttentionMix`: per frame, each model is projected to a common width
//!   `d_c`, scored against a learned query with scaled dot product, and the
//!   projections are averaged under the softmax of those scores over models.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::FeatureMatrix;
use crate::tensor::{matmul_acc, matmul_wt_acc, matmul_xt_acc, Mat, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CombinerKind {
    #[serde(rename = "concat")]
    Concat,
    #[serde(rename = "sum")]
    Sum,
    #[serde(rename = "weighted")]
    WeightedAverage,
    #[serde(rename = "attention")]
    AttentionMix,
}

impl CombinerKind {
    pub fn code(self) -> u8 {
        match self {
            CombinerKind::Concat => 0,
            CombinerKind::Sum => 1,
            CombinerKind::WeightedAverage => 2,
            CombinerKind::AttentionMix => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => CombinerKind::Concat,
            1 => CombinerKind::Sum,
            2 => CombinerKind::WeightedAverage,
            3 => CombinerKind::AttentionMix,
            _ => return None,
        })
    }

    pub fn is_learnable(self) -> bool {
        matches!(self, CombinerKind::WeightedAverage | CombinerKind::AttentionMix)
    }

    /// Width of the combined features.
    pub fn output_dim(self, dims: &[usize], d_c: usize) -> Result<usize> {
        let first = *dims.first().ok_or(Error::EmptyInput)?;
        match self {
            CombinerKind::Concat => Ok(dims.iter().sum()),
            CombinerKind::Sum | CombinerKind::WeightedAverage => {
                if dims.iter().any(|&d| d != first) {
                    return Err(Error::DimMismatch(format!("{self} needs equal widths, got {dims:?}")));
                }
                Ok(first)
            }
            CombinerKind::AttentionMix => {
                if d_c == 0 {
                    return Err(Error::InvalidConfig("attention width d_c must be positive".into()));
                }
                Ok(d_c)
            }
        }
    }
}

impl fmt::Display for CombinerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CombinerKind::Concat => "concat",
            CombinerKind::Sum => "sum",
            CombinerKind::WeightedAverage => "weighted",
            CombinerKind::AttentionMix => "attention",
        })
    }
}

impl FromStr for CombinerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(CombinerKind::Concat),
            "sum" => Ok(CombinerKind::Sum),
            "weighted" => Ok(CombinerKind::WeightedAverage),
            "attention" => Ok(CombinerKind::AttentionMix),
            other => Err(Error::InvalidConfig(format!(
                "unknown combiner {other:?} (expected concat, sum, weighted or attention)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinerParams<F> {
    pub kind: CombinerKind,
    /// One logit per model (`WeightedAverage`).
    pub mix_logits: Vec<F>,
    /// `dims[m] × d_c` per model (`AttentionMix`).
    pub attn_proj: Vec<Mat<F>>,
    /// Query of width `d_c` (`AttentionMix`).
    pub query: Vec<F>,
    pub d_c: usize,
}

impl<F: Real> CombinerParams<F> {
    pub fn concat() -> Self {
        Self::plain(CombinerKind::Concat)
    }

    pub fn sum() -> Self {
        Self::plain(CombinerKind::Sum)
    }

    fn plain(kind: CombinerKind) -> Self {
        CombinerParams {
            kind,
            mix_logits: Vec::new(),
            attn_proj: Vec::new(),
            query: Vec::new(),
            d_c: 0,
        }
    }

    pub fn weighted(mix_logits: Vec<F>) -> Self {
        CombinerParams {
            mix_logits,
            ..Self::plain(CombinerKind::WeightedAverage)
        }
    }

    pub fn attention(attn_proj: Vec<Mat<F>>, query: Vec<F>) -> Self {
        let d_c = query.len();
        CombinerParams {
            attn_proj,
            query,
            d_c,
            ..Self::plain(CombinerKind::AttentionMix)
        }
    }

    /// Softmax of the mixing logits.
    pub fn mix_weights(&self) -> Vec<F> {
        softmax(&self.mix_logits)
    }

    fn check(&self, mats: &[Mat<F>]) -> Result<usize> {
        let first = mats.first().ok_or(Error::EmptyInput)?;
        let frames = first.rows();
        if let Some(m) = mats.iter().find(|m| m.rows() != frames) {
            return Err(Error::FrameMismatch(format!("{} vs {} frames", m.rows(), frames)));
        }
        let dims: Vec<usize> = mats.iter().map(Mat::cols).collect();
        match self.kind {
            CombinerKind::WeightedAverage if self.mix_logits.len() != mats.len() => {
                return Err(Error::DimMismatch(format!(
                    "{} mixing logits for {} models",
                    self.mix_logits.len(),
                    mats.len()
                )));
            }
            CombinerKind::AttentionMix => {
                if self.attn_proj.len() != mats.len() || self.query.len() != self.d_c {
                    return Err(Error::DimMismatch(format!(
                        "{} projections and query width {} for {} models at d_c {}",
                        self.attn_proj.len(),
                        self.query.len(),
                        mats.len(),
                        self.d_c
                    )));
                }
                for (m, (p, &d)) in self.attn_proj.iter().zip(&dims).enumerate() {
                    if p.shape() != (d, self.d_c) {
                        return Err(Error::DimMismatch(format!(
                            "projection {m} is {:?}, input needs ({d}, {})",
                            p.shape(),
                            self.d_c
                        )));
                    }
                }
            }
            _ => {}
        }
        self.kind.output_dim(&dims, self.d_c)
    }
}

fn softmax<F: Real>(xs: &[F]) -> Vec<F> {
    let max = xs.iter().copied().fold(F::neg_infinity(), F::max);
    let e: Vec<F> = xs.iter().map(|&x| (x - max).exp()).collect();
    let s: F = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Column offsets of each input inside a concatenation.
pub fn concat_offsets(dims: &[usize]) -> Vec<usize> {
    dims.iter()
        .scan(0, |acc, &d| {
            let o = *acc;
            *acc += d;
            Some(o)
        })
        .collect()
}

struct AttentionTerms<F> {
    projected: Vec<Mat<F>>,
    /// `coeffs[t * models + m]`
    coeffs: Vec<F>,
}

fn attention_terms<F: Real>(mats: &[Mat<F>], params: &CombinerParams<F>) -> AttentionTerms<F> {
    let frames = mats[0].rows();
    let n = mats.len();
    let scale = F::one() / F::lit(params.d_c as f64).sqrt();
    let projected: Vec<Mat<F>> = mats
        .iter()
        .zip(&params.attn_proj)
        .map(|(x, p)| {
            let mut h = Mat::zeros(frames, params.d_c);
            matmul_acc(x, p.as_slice(), &mut h);
            h
        })
        .collect();
    let mut coeffs = Vec::with_capacity(frames * n);
    let mut scores = vec![F::zero(); n];
    for t in 0..frames {
        for (m, h) in projected.iter().enumerate() {
            scores[m] = h.row(t).iter().zip(&params.query).map(|(&a, &b)| a * b).sum::<F>() * scale;
        }
        coeffs.extend(softmax(&scores));
    }
    AttentionTerms { projected, coeffs }
}

/// Per-frame attention coefficients over models (`frames × models`).
pub fn attention_coefficients<F: Real>(mats: &[Mat<F>], params: &CombinerParams<F>) -> Result<Mat<F>> {
    if params.kind != CombinerKind::AttentionMix {
        return Err(Error::InvalidConfig("coefficients exist only for attention mixing".into()));
    }
    params.check(mats)?;
    let terms = attention_terms(mats, params);
    Mat::from_vec(mats[0].rows(), mats.len(), terms.coeffs)
}

pub fn combine<F: Real>(mats: &[Mat<F>], params: &CombinerParams<F>) -> Result<Mat<F>> {
    let out_dim = params.check(mats)?;
    let frames = mats[0].rows();
    let mut out = Mat::zeros(frames, out_dim);
    match params.kind {
        CombinerKind::Concat => {
            let offsets = concat_offsets(&mats.iter().map(Mat::cols).collect::<Vec<_>>());
            for t in 0..frames {
                let row = out.row_mut(t);
                for (x, &o) in mats.iter().zip(&offsets) {
                    row[o..o + x.cols()].copy_from_slice(x.row(t));
                }
            }
        }
        CombinerKind::Sum => {
            for x in mats {
                out.add_assign(x);
            }
        }
        CombinerKind::WeightedAverage => {
            let w = params.mix_weights();
            for (x, &wm) in mats.iter().zip(&w) {
                for (o, &v) in out.as_mut_slice().iter_mut().zip(x.as_slice()) {
                    *o += wm * v;
                }
            }
        }
        CombinerKind::AttentionMix => {
            let n = mats.len();
            let terms = attention_terms(mats, params);
            for t in 0..frames {
                let row = out.row_mut(t);
                for (m, h) in terms.projected.iter().enumerate() {
                    let a = terms.coeffs[t * n + m];
                    for (o, &v) in row.iter_mut().zip(h.row(t)) {
                        *o += a * v;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombineGrads<F> {
    pub inputs: Vec<Mat<F>>,
    pub mix_logits: Vec<F>,
    pub attn_proj: Vec<Mat<F>>,
    pub query: Vec<F>,
}

pub fn combine_backward<F: Real>(
    mats: &[Mat<F>],
    params: &CombinerParams<F>,
    grad_out: &Mat<F>,
) -> Result<CombineGrads<F>> {
    let out_dim = params.check(mats)?;
    let frames = mats[0].rows();
    if grad_out.shape() != (frames, out_dim) {
        return Err(Error::ShapeMismatch(format!(
            "output gradient {:?}, combined output is ({frames}, {out_dim})",
            grad_out.shape()
        )));
    }
    let mut grads = CombineGrads {
        inputs: Vec::with_capacity(mats.len()),
        mix_logits: Vec::new(),
        attn_proj: Vec::new(),
        query: Vec::new(),
    };
    match params.kind {
        CombinerKind::Concat => {
            let offsets = concat_offsets(&mats.iter().map(Mat::cols).collect::<Vec<_>>());
            for (x, &o) in mats.iter().zip(&offsets) {
                let mut g = Mat::zeros(frames, x.cols());
                for t in 0..frames {
                    g.row_mut(t).copy_from_slice(&grad_out.row(t)[o..o + x.cols()]);
                }
                grads.inputs.push(g);
            }
        }
        CombinerKind::Sum => {
            grads.inputs = vec![grad_out.clone(); mats.len()];
        }
        CombinerKind::WeightedAverage => {
            let w = params.mix_weights();
            let dw: Vec<F> = mats
                .iter()
                .map(|x| x.as_slice().iter().zip(grad_out.as_slice()).map(|(&a, &b)| a * b).sum())
                .collect();
            let dot: F = w.iter().zip(&dw).map(|(&a, &b)| a * b).sum();
            grads.mix_logits = w.iter().zip(&dw).map(|(&wm, &g)| wm * (g - dot)).collect();
            grads.inputs = w.iter().map(|&wm| grad_out.map(|g| g * wm)).collect();
        }
        CombinerKind::AttentionMix => {
            let n = mats.len();
            let d_c = params.d_c;
            let scale = F::one() / F::lit(d_c as f64).sqrt();
            let terms = attention_terms(mats, params);
            let mut dh: Vec<Mat<F>> = (0..n).map(|_| Mat::zeros(frames, d_c)).collect();
            let mut dq = vec![F::zero(); d_c];
            let mut da = vec![F::zero(); n];
            for t in 0..frames {
                let go = grad_out.row(t);
                for (m, h) in terms.projected.iter().enumerate() {
                    da[m] = go.iter().zip(h.row(t)).map(|(&a, &b)| a * b).sum();
                }
                let a = &terms.coeffs[t * n..(t + 1) * n];
                let mean: F = a.iter().zip(&da).map(|(&x, &y)| x * y).sum();
                for m in 0..n {
                    let ds = a[m] * (da[m] - mean) * scale;
                    let hrow = terms.projected[m].row(t);
                    for (q, &hv) in dq.iter_mut().zip(hrow) {
                        *q += ds * hv;
                    }
                    let drow = dh[m].row_mut(t);
                    for k in 0..d_c {
                        drow[k] = a[m] * go[k] + ds * params.query[k];
                    }
                }
            }
            for ((x, p), g) in mats.iter().zip(&params.attn_proj).zip(&dh) {
                let mut dp = Mat::zeros(x.cols(), d_c);
                matmul_xt_acc(x, g, dp.as_mut_slice());
                grads.attn_proj.push(dp);
                let mut dx = Mat::zeros(frames, x.cols());
                matmul_wt_acc(g, p.as_slice(), &mut dx);
                grads.inputs.push(dx);
            }
            grads.query = dq;
        }
    }
    Ok(grads)
}

/// Combines stored features; the result is tagged with the joined model tags.
pub fn combine_features(mats: &[FeatureMatrix], params: &CombinerParams<f32>) -> Result<FeatureMatrix> {
    let first = mats.first().ok_or(Error::EmptyInput)?;
    let inputs: Vec<Mat<f32>> = mats.iter().map(FeatureMatrix::to_mat).collect();
    let out = combine(&inputs, params)?;
    let tag = mats.iter().map(|m| m.model_tag.as_str()).collect::<Vec<_>>().join("+");
    FeatureMatrix::from_mat(tag, first.frame_stride_ms, &out)
}
