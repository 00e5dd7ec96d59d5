//! On-disk embeddings, the corpus manifest, multi-model frame alignment and
//! the synthetic corpus generator.

mod format;
mod manifest;
mod synth;

pub use format::{read_features, write_features, FeatureMatrix, FEATURE_MAGIC, FEATURE_VERSION};
pub(crate) use format::ByteReader;
pub use manifest::{Manifest, UtteranceRecord};
pub use synth::{synth_corpus, synth_corpus_traced, SynthConfig, SynthTrace, SYNTH_FRAME_STRIDE_MS};

use crate::error::{Error, Result};

pub const DEFAULT_ALIGN_TOLERANCE: usize = 2;

/// Trims every stream to the shortest one. Streams whose frame counts differ
/// by more than `tolerance` are rejected: they did not come from the same audio.
pub fn align_frames(mats: &[FeatureMatrix], tolerance: usize) -> Result<Vec<FeatureMatrix>> {
    let first = mats.first().ok_or(Error::EmptyInput)?;
    if mats.iter().any(|m| m.frame_stride_ms != first.frame_stride_ms) {
        return Err(Error::StrideMismatch(
            mats.iter().map(|m| m.frame_stride_ms).collect(),
        ));
    }
    let min = mats.iter().map(|m| m.num_frames).min().unwrap_or(0);
    let max = mats.iter().map(|m| m.num_frames).max().unwrap_or(0);
    if max - min > tolerance {
        return Err(Error::LengthSpreadExceeded { min, max, tolerance });
    }
    Ok(mats.iter().map(|m| m.truncated(min)).collect())
}
