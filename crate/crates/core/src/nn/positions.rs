use crate::error::{Error, Result};
use crate::tensor::{Mat, Real};

/// Fixed sinusoidal encodings: `(t, 2i) = sin(t / 10000^(2i/d))`,
/// `(t, 2i+1) = cos(t / 10000^(2i/d))`.
pub fn sinusoidal_positions<F: Real>(max_frames: usize, d_model: usize) -> Result<Mat<F>> {
    if !d_model.is_multiple_of(2) {
        return Err(Error::OddWidth(d_model));
    }
    let mut pe = Mat::zeros(max_frames, d_model);
    for t in 0..max_frames {
        let row = pe.row_mut(t);
        for i in 0..d_model / 2 {
            let angle = t as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            row[2 * i] = F::lit(angle.sin());
            row[2 * i + 1] = F::lit(angle.cos());
        }
    }
    Ok(pe)
}
