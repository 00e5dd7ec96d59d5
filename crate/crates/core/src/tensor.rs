//! Dense row-major matrices generic over the float width.
//!
//! Training runs at `f32`; every kernel is also instantiated at `f64` so the
//! gradient checks can use finite differences with a meaningful step size.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// log(exp(a) + exp(b)) with IEEE −∞ treated as probability zero.
#[inline]
pub fn log_add<F: Real>(a: F, b: F) -> F {
    if a == F::neg_infinity() {
        return b;
    }
    if b == F::neg_infinity() {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp<F: Real>(xs: &[F]) -> F {
    let max = xs.iter().copied().fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        return max;
    }
    let s: F = xs.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mat<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Real> Mat<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::ShapeMismatch("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Mat {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<F> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: F) {
        self.data[r * self.cols + c] = v;
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Mat<F>) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Copy of the first `n` rows.
    pub fn head_rows(&self, n: usize) -> Self {
        Mat {
            rows: n,
            cols: self.cols,
            data: self.data[..n * self.cols].to_vec(),
        }
    }

    /// Copy padded (with zero rows) or truncated to `n` rows.
    pub fn resized_rows(&self, n: usize) -> Self {
        let mut data = vec![F::zero(); n * self.cols];
        let keep = n.min(self.rows) * self.cols;
        data[..keep].copy_from_slice(&self.data[..keep]);
        Mat {
            rows: n,
            cols: self.cols,
            data,
        }
    }

    pub fn convert<G: Real>(&self) -> Mat<G> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| G::lit(x.as_f64())).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Mat<F>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs().as_f64())
            .fold(0.0, f64::max)
    }
}

/// `out += x · w` where `w` is row-major `(x.cols, out.cols)`.
pub fn matmul_acc<F: Real>(x: &Mat<F>, w: &[F], out: &mut Mat<F>) {
    let (n, k) = x.shape();
    let m = out.cols;
    debug_assert_eq!(w.len(), k * m);
    for i in 0..n {
        let xi = &x.data[i * k..(i + 1) * k];
        let oi = &mut out.data[i * m..(i + 1) * m];
        for (p, &xv) in xi.iter().enumerate() {
            if xv == F::zero() {
                continue;
            }
            let wp = &w[p * m..(p + 1) * m];
            for (o, &wv) in oi.iter_mut().zip(wp) {
                *o += xv * wv;
            }
        }
    }
}

/// `out += dy · wᵀ` where `w` is row-major `(out.cols, dy.cols)`.
pub fn matmul_wt_acc<F: Real>(dy: &Mat<F>, w: &[F], out: &mut Mat<F>) {
    let (n, m) = dy.shape();
    let k = out.cols;
    debug_assert_eq!(w.len(), k * m);
    for i in 0..n {
        let di = &dy.data[i * m..(i + 1) * m];
        let oi = &mut out.data[i * k..(i + 1) * k];
        for (p, o) in oi.iter_mut().enumerate() {
            let wp = &w[p * m..(p + 1) * m];
            let mut s = F::zero();
            for (&a, &b) in di.iter().zip(wp) {
                s += a * b;
            }
            *o += s;
        }
    }
}

/// `dw += xᵀ · dy`, `dw` row-major `(x.cols, dy.cols)`.
pub fn matmul_xt_acc<F: Real>(x: &Mat<F>, dy: &Mat<F>, dw: &mut [F]) {
    let (n, k) = x.shape();
    let m = dy.cols;
    debug_assert_eq!(dw.len(), k * m);
    for i in 0..n {
        let xi = &x.data[i * k..(i + 1) * k];
        let di = &dy.data[i * m..(i + 1) * m];
        for (p, &xv) in xi.iter().enumerate() {
            if xv == F::zero() {
                continue;
            }
            let row = &mut dw[p * m..(p + 1) * m];
            for (g, &d) in row.iter_mut().zip(di) {
                *g += xv * d;
            }
        }
    }
}
