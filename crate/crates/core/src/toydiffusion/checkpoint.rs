//! Binary checkpoints for denoiser weights (`ADKF`) and embeddings (`ADKE`).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! ADKF | u32 version | u32 x_dim | u32 embed_dim | u32 time_dim | u32 hidden0 | u32 hidden1 | u64 count | f64 x count
//! ADKE | u32 version | u32 dim   | u64 count     | f64 x count
//! ```

use std::path::Path;

use crate::error::{Error, Result};

use super::{Architecture, ConditioningEmbedding, DenoiserParams};

pub const MODEL_MAGIC: &[u8; 4] = b"ADKF";
pub const EMBEDDING_MAGIC: &[u8; 4] = b"ADKE";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_params(params: &DenoiserParams) -> Vec<u8> {
    let a = params.arch();
    let w = params.weights();
    let mut out = Vec::with_capacity(36 + 8 * w.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [a.x_dim, a.embed_dim, a.time_dim, a.hidden[0], a.hidden[1]] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(w.len() as u64).to_le_bytes());
    for v in w {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<DenoiserParams> {
    let mut r = Reader::new(bytes, MODEL_MAGIC)?;
    let x_dim = r.u32()? as usize;
    let embed_dim = r.u32()? as usize;
    let time_dim = r.u32()? as usize;
    let hidden = [r.u32()? as usize, r.u32()? as usize];
    let arch = Architecture {
        x_dim,
        embed_dim,
        time_dim,
        hidden,
    };
    let weights = r.f64s()?;
    r.finish()?;
    DenoiserParams::from_weights(arch, weights)
}

pub fn encode_embedding(e: &ConditioningEmbedding) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 8 * e.dim());
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(e.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(e.dim() as u64).to_le_bytes());
    for v in e.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_embedding(bytes: &[u8]) -> Result<ConditioningEmbedding> {
    let mut r = Reader::new(bytes, EMBEDDING_MAGIC)?;
    let dim = r.u32()? as usize;
    let values = r.f64s()?;
    r.finish()?;
    if values.len() != dim {
        return Err(Error::Checkpoint(format!(
            "embedding header says {dim} values, payload has {}",
            values.len()
        )));
    }
    ConditioningEmbedding::new(values)
}

pub fn save_params(params: &DenoiserParams, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_params(params))?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<DenoiserParams> {
    decode_params(&std::fs::read(path)?)
}

pub fn save_embedding(e: &ConditioningEmbedding, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_embedding(e))?;
    Ok(())
}

pub fn load_embedding(path: impl AsRef<Path>) -> Result<ConditioningEmbedding> {
    decode_embedding(&std::fs::read(path)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != magic {
            return Err(Error::Checkpoint(format!(
                "bad magic (expected {})",
                String::from_utf8_lossy(magic)
            )));
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint("truncated checkpoint".into())),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let count = self.u64()? as usize;
        let raw = self.take(
            count
                .checked_mul(8)
                .ok_or_else(|| Error::Checkpoint("count overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}
