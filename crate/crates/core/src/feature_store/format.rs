//! Binary feature-file layout (all little-endian):
//!
//! ```text
//! 0..4    magic "SSLF"
//! 4..8    version u32 = 1
//!         tag_len u16, tag bytes (UTF-8)
//!         dim u32, num_frames u32, frame_stride_ms f32
//!         num_frames * dim f32 payload, frame-major
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Mat, Real};

pub const FEATURE_MAGIC: &[u8; 4] = b"SSLF";
pub const FEATURE_VERSION: u32 = 1;

/// Per-utterance embeddings from one upstream model, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub model_tag: String,
    pub dim: usize,
    pub num_frames: usize,
    pub frame_stride_ms: f32,
    pub values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(
        model_tag: impl Into<String>,
        dim: usize,
        frame_stride_ms: f32,
        values: Vec<f32>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMatrix("dim must be positive".into()));
        }
        if !values.len().is_multiple_of(dim) {
            return Err(Error::InvalidMatrix(format!(
                "{} values is not a multiple of dim {dim}",
                values.len()
            )));
        }
        let fm = FeatureMatrix {
            model_tag: model_tag.into(),
            dim,
            num_frames: values.len() / dim,
            frame_stride_ms,
            values,
        };
        fm.validate()?;
        Ok(fm)
    }

    pub fn from_mat(model_tag: impl Into<String>, frame_stride_ms: f32, m: &Mat<f32>) -> Result<Self> {
        let fm = FeatureMatrix {
            model_tag: model_tag.into(),
            dim: m.cols(),
            num_frames: m.rows(),
            frame_stride_ms,
            values: m.as_slice().to_vec(),
        };
        fm.validate()?;
        Ok(fm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidMatrix("dim must be positive".into()));
        }
        if self.values.len() != self.num_frames * self.dim {
            return Err(Error::InvalidMatrix(format!(
                "expected {}x{} values, found {}",
                self.num_frames,
                self.dim,
                self.values.len()
            )));
        }
        if !(self.frame_stride_ms > 0.0 && self.frame_stride_ms.is_finite()) {
            return Err(Error::InvalidMatrix(format!(
                "frame stride {} must be positive",
                self.frame_stride_ms
            )));
        }
        if self.model_tag.len() > u16::MAX as usize {
            return Err(Error::InvalidMatrix("model tag too long".into()));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix(format!(
                "non-finite value at frame {} column {}",
                i / self.dim,
                i % self.dim
            )));
        }
        Ok(())
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn to_mat<F: Real>(&self) -> Mat<F> {
        let data = self.values.iter().map(|&v| F::lit(v as f64)).collect();
        Mat::from_vec(self.num_frames, self.dim, data).expect("validated shape")
    }

    /// Keep the first `n` frames.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.num_frames);
        FeatureMatrix {
            model_tag: self.model_tag.clone(),
            dim: self.dim,
            num_frames: n,
            frame_stride_ms: self.frame_stride_ms,
            values: self.values[..n * self.dim].to_vec(),
        }
    }

    /// SHA-256 of the little-endian payload, hex encoded.
    pub fn payload_checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let tag = self.model_tag.as_bytes();
        let mut out = Vec::with_capacity(header_len(tag.len()) + self.values.len() * 4);
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&(tag.len() as u16).to_le_bytes());
        out.extend_from_slice(tag);
        out.extend_from_slice(&to_u32(self.dim, "dim")?.to_le_bytes());
        out.extend_from_slice(&to_u32(self.num_frames, "num_frames")?.to_le_bytes());
        out.extend_from_slice(&self.frame_stride_ms.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4)?;
        if magic != FEATURE_MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"SSLF\"",
                String::from_utf8_lossy(magic)
            )));
        }
        let version = r.u32()?;
        if version != FEATURE_VERSION {
            return Err(Error::Format(format!(
                "unsupported version {version}, expected {FEATURE_VERSION}"
            )));
        }
        let tag_len = r.u16()? as usize;
        let model_tag = String::from_utf8(r.take(tag_len)?.to_vec())
            .map_err(|_| Error::Format("model tag is not UTF-8".into()))?;
        let dim = r.u32()? as usize;
        let num_frames = r.u32()? as usize;
        let frame_stride_ms = r.f32()?;

        let expected = header_len(tag_len) as u64 + num_frames as u64 * dim as u64 * 4;
        if expected != bytes.len() as u64 {
            return Err(Error::Format(format!(
                "declared {num_frames}x{dim} payload needs {expected} bytes, file has {}",
                bytes.len()
            )));
        }
        let values = r
            .rest()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let fm = FeatureMatrix {
            model_tag,
            dim,
            num_frames,
            frame_stride_ms,
            values,
        };
        fm.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(fm)
    }
}

fn header_len(tag_len: usize) -> usize {
    4 + 4 + 2 + tag_len + 4 + 4 + 4
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidMatrix(format!("{what} {v} exceeds u32")))
}

pub fn write_features(path: impl AsRef<Path>, fm: &FeatureMatrix) -> Result<()> {
    let path = path.as_ref();
    let bytes = fm.encode()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureMatrix::decode(&bytes)
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated: need {n} bytes at offset {}, only {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_bits(self.u32()?))
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("string is not UTF-8".into()))
    }

    pub(crate) fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}
