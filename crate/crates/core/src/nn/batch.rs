use crate::error::{Error, Result};
use crate::tensor::{Mat, Real};

/// Variable-length items padded to a common frame count.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch<F> {
    /// One `max_frames × width` matrix per item.
    pub values: Vec<Mat<F>>,
    /// `frame_mask[i][t]` is true for real frames.
    pub frame_mask: Vec<Vec<bool>>,
    pub lengths: Vec<usize>,
}

impl<F: Real> PaddedBatch<F> {
    /// Pads `items` with zero frames to the longest item (or `min_frames`).
    pub fn from_items(items: &[Mat<F>], min_frames: usize) -> Result<Self> {
        let width = items.first().map_or(0, Mat::cols);
        if items.iter().any(|m| m.cols() != width) {
            return Err(Error::ShapeMismatch("items of a batch must share a width".into()));
        }
        let max_frames = items.iter().map(Mat::rows).max().unwrap_or(0).max(min_frames);
        let lengths: Vec<usize> = items.iter().map(Mat::rows).collect();
        Ok(PaddedBatch {
            values: items.iter().map(|m| m.resized_rows(max_frames)).collect(),
            frame_mask: lengths.iter().map(|&n| (0..max_frames).map(|t| t < n).collect()).collect(),
            lengths,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.values.len()
    }

    pub fn max_frames(&self) -> usize {
        self.values.first().map_or(0, Mat::rows)
    }

    pub fn width(&self) -> usize {
        self.values.first().map_or(0, Mat::cols)
    }

    /// Checks mask/length consistency and a uniform `max_frames × width` grid.
    pub fn validate(&self, width: usize) -> Result<()> {
        let frames = self.max_frames();
        if self.frame_mask.len() != self.values.len() || self.lengths.len() != self.values.len() {
            return Err(Error::MaskShapeMismatch(format!(
                "{} items, {} masks, {} lengths",
                self.values.len(),
                self.frame_mask.len(),
                self.lengths.len()
            )));
        }
        for (i, (v, mask)) in self.values.iter().zip(&self.frame_mask).enumerate() {
            if v.shape() != (frames, width) {
                return Err(Error::ShapeMismatch(format!(
                    "item {i} is {:?}, expected ({frames}, {width})",
                    v.shape()
                )));
            }
            if mask.len() != frames {
                return Err(Error::MaskShapeMismatch(format!(
                    "item {i} mask has {} entries for {frames} frames",
                    mask.len()
                )));
            }
            let n = self.lengths[i];
            if mask.iter().enumerate().any(|(t, &m)| m != (t < n)) {
                return Err(Error::MaskShapeMismatch(format!(
                    "item {i} mask is not a prefix of length {n}"
                )));
            }
        }
        Ok(())
    }

    /// Real frames of item `i`.
    pub fn unpadded(&self, i: usize) -> Mat<F> {
        self.values[i].head_rows(self.lengths[i])
    }

    /// Same masks, new values.
    pub fn with_values(&self, values: Vec<Mat<F>>) -> Self {
        PaddedBatch {
            values,
            frame_mask: self.frame_mask.clone(),
            lengths: self.lengths.clone(),
        }
    }
}

pub(crate) fn zero_padded_rows<F: Real>(m: &mut Mat<F>, mask: &[bool]) {
    for (t, &real) in mask.iter().enumerate() {
        if !real {
            m.row_mut(t).iter_mut().for_each(|v| *v = F::zero());
        }
    }
}
