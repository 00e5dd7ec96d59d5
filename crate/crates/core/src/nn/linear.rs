use std::ops::Range;

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{matmul_acc, matmul_wt_acc, matmul_xt_acc, Mat, Real};

/// `y = x·W + b` with `W` row-major `(in, out)`.
pub fn linear_forward<F: Real>(x: &Mat<F>, w: &[F], b: &[F]) -> Result<Mat<F>> {
    let out_dim = b.len();
    if w.len() != x.cols() * out_dim {
        return Err(Error::ShapeMismatch(format!(
            "input width {} and {} bias entries need a {}-entry weight, got {}",
            x.cols(),
            out_dim,
            x.cols() * out_dim,
            w.len()
        )));
    }
    let mut y = Mat::zeros(x.rows(), out_dim);
    for t in 0..y.rows() {
        y.row_mut(t).copy_from_slice(b);
    }
    matmul_acc(x, w, &mut y);
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads<F> {
    pub dx: Mat<F>,
    pub dw: Vec<F>,
    pub db: Vec<F>,
}

pub fn linear_backward<F: Real>(x: &Mat<F>, w: &[F], dy: &Mat<F>) -> Result<LinearGrads<F>> {
    if w.len() != x.cols() * dy.cols() || x.rows() != dy.rows() {
        return Err(Error::ShapeMismatch(format!(
            "x {:?}, dy {:?}, weight of {} entries",
            x.shape(),
            dy.shape(),
            w.len()
        )));
    }
    let mut dw = vec![F::zero(); w.len()];
    let mut db = vec![F::zero(); dy.cols()];
    let dx = linear_backward_acc(x, w, dy, &mut dw, &mut db);
    Ok(LinearGrads { dx, dw, db })
}

/// Accumulates into `dw`/`db` and returns the input gradient.
pub(crate) fn linear_backward_acc<F: Real>(x: &Mat<F>, w: &[F], dy: &Mat<F>, dw: &mut [F], db: &mut [F]) -> Mat<F> {
    matmul_xt_acc(x, dy, dw);
    for t in 0..dy.rows() {
        for (g, &d) in db.iter_mut().zip(dy.row(t)) {
            *g += d;
        }
    }
    let mut dx = Mat::zeros(x.rows(), x.cols());
    matmul_wt_acc(dy, w, &mut dx);
    dx
}

/// Location of a linear layer's weight and bias inside a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSlot {
    pub weight: Range<usize>,
    pub bias: Range<usize>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearSlot {
    pub fn resolve<F: Real>(store: &ParamStore<F>, prefix: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        Ok(LinearSlot {
            weight: store.slot(&format!("{prefix}.weight"), &[in_dim, out_dim])?,
            bias: store.slot(&format!("{prefix}.bias"), &[out_dim])?,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<F: Real>(&self, values: &[F], x: &Mat<F>) -> Result<Mat<F>> {
        linear_forward(x, &values[self.weight.clone()], &values[self.bias.clone()])
    }

    pub fn backward<F: Real>(&self, values: &[F], grads: &mut [F], x: &Mat<F>, dy: &Mat<F>) -> Mat<F> {
        let (dw, db) = disjoint_mut(grads, self.weight.clone(), self.bias.clone());
        linear_backward_acc(x, &values[self.weight.clone()], dy, dw, db)
    }
}

/// Two non-overlapping mutable windows, `a` before `b`.
pub(crate) fn disjoint_mut<F>(buf: &mut [F], a: Range<usize>, b: Range<usize>) -> (&mut [F], &mut [F]) {
    assert!(a.end <= b.start, "ranges must be ordered and disjoint");
    let (lo, hi) = buf.split_at_mut(b.start);
    (&mut lo[a], &mut hi[..b.end - b.start])
}
