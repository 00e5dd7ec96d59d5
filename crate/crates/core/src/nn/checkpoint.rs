//! Checkpoint layout (little-endian):
//!
//! ```text
//! magic "ENSC", version u32 = 1
//! config block:
//!   num_layers u32, d_model u32, num_heads u32, d_ff u32, dropout f32, positions u8
//!   combiner u8 (0 concat, 1 sum, 2 weighted, 3 attention), d_c u32
//!   vocabulary labels without blank: u16 length + UTF-8
//!   model tag count u16, then per tag: u16 length + UTF-8
//!   per tag: input width u32
//! parameter count u32
//! per parameter: name (u16 length + UTF-8), rank u8, shape u32 × rank, f32 payload
//! ```

use std::fs;
use std::path::Path;

use super::encoder::EncoderConfig;
use super::init::{param_layout, HeadConfig};
use super::params::ParamStore;
use crate::combiners::CombinerKind;
use crate::ctc::Vocab;
use crate::error::{Error, Result};
use crate::feature_store::ByteReader;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ENSC";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u16(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u16::try_from(v).map_err(|_| Error::InvalidConfig(format!("{what} {v} exceeds u16")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidConfig(format!("{what} {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u16(out, s.len(), "string length")?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn encode_checkpoint(cfg: &HeadConfig, store: &ParamStore<f32>) -> Result<Vec<u8>> {
    check_layout(cfg, store)?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let e = &cfg.encoder;
    put_u32(&mut out, e.num_layers, "num_layers")?;
    put_u32(&mut out, e.d_model, "d_model")?;
    put_u32(&mut out, e.num_heads, "num_heads")?;
    put_u32(&mut out, e.d_ff, "d_ff")?;
    out.extend_from_slice(&e.dropout_rate.to_le_bytes());
    out.push(e.positions as u8);
    out.push(cfg.combiner.code());
    put_u32(&mut out, cfg.d_c, "d_c")?;
    put_str(&mut out, &cfg.vocab.labels())?;
    put_u16(&mut out, cfg.model_tags.len(), "model tag count")?;
    for t in &cfg.model_tags {
        put_str(&mut out, t)?;
    }
    for &d in &cfg.input_dims {
        put_u32(&mut out, d, "input width")?;
    }
    put_u32(&mut out, store.specs().len(), "parameter count")?;
    for spec in store.specs() {
        put_str(&mut out, &spec.name)?;
        out.push(spec.shape.len() as u8);
        for &s in &spec.shape {
            put_u32(&mut out, s, "shape entry")?;
        }
        for v in &store.values()[spec.range()] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(HeadConfig, ParamStore<f32>)> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let encoder = EncoderConfig {
        num_layers: r.u32()? as usize,
        d_model: r.u32()? as usize,
        num_heads: r.u32()? as usize,
        d_ff: r.u32()? as usize,
        dropout_rate: r.f32()?,
        positions: match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::Format(format!("bad positions flag {b}"))),
        },
    };
    let code = r.u8()?;
    let combiner = CombinerKind::from_code(code).ok_or_else(|| Error::Format(format!("unknown combiner code {code}")))?;
    let d_c = r.u32()? as usize;
    let vocab = Vocab::new(r.string()?.chars()).map_err(|e| Error::Format(e.to_string()))?;
    let n_tags = r.u16()? as usize;
    let model_tags = (0..n_tags).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
    let input_dims = (0..n_tags).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let cfg = HeadConfig {
        encoder,
        combiner,
        d_c,
        vocab,
        model_tags,
        input_dims,
    };

    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let payload = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("parameter too large".into()))?)?;
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.add(name, &shape, values).map_err(|e| Error::Format(e.to_string()))?;
    }
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes after parameters", r.remaining())));
    }
    check_layout(&cfg, &store).map_err(|e| Error::Format(e.to_string()))?;
    Ok((cfg, store))
}

/// The store must hold exactly the parameters the config implies, in order.
fn check_layout(cfg: &HeadConfig, store: &ParamStore<f32>) -> Result<()> {
    let expected = param_layout(cfg)?;
    if expected.len() != store.specs().len() {
        return Err(Error::ShapeMismatch(format!(
            "config implies {} parameters, store has {}",
            expected.len(),
            store.specs().len()
        )));
    }
    for ((name, shape, _), spec) in expected.iter().zip(store.specs()) {
        if name != &spec.name || shape != &spec.shape {
            return Err(Error::ShapeMismatch(format!(
                "expected {name} {shape:?}, found {} {:?}",
                spec.name, spec.shape
            )));
        }
    }
    Ok(())
}

pub fn save_checkpoint(path: impl AsRef<Path>, cfg: &HeadConfig, store: &ParamStore<f32>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(cfg, store)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(HeadConfig, ParamStore<f32>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
