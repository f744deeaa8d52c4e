//! Binary checkpoint format.
//!
//! ```text
//! "CIRA"                      magic, 4 bytes
//! u32                         format version
//! u32 x7                      seq_len, d_model, n_heads, n_layers, d_ff, vocab_size, tagset_size
//! u64                         seed
//! u8                          enrichment mode (0 sum-embedding, 1 interleave-tokens)
//! u32                         tensor count
//! per tensor: u32 rank, u32 dims[rank], f64 values[prod(dims)]
//! u32                         vocabulary size
//! per token: u32 byte length, UTF-8 bytes
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::config::ModelConfig;
use super::params::ModelParameters;
use super::Model;
use crate::error::{CheckpointError, Error, Result};
use crate::syntax::EnrichmentMode;
use crate::tokenizer::Vocabulary;

pub const MAGIC: &[u8; 4] = b"CIRA";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(model: &Model) -> Vec<u8> {
    let cfg = &model.config;
    let mut out = Vec::with_capacity(64 + model.params.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for dim in [
        cfg.seq_len,
        cfg.d_model,
        cfg.n_heads,
        cfg.n_layers,
        cfg.d_ff,
        cfg.vocab_size,
        cfg.tagset_size,
    ] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    out.push(cfg.mode.id());

    let views = model.params.views();
    out.extend_from_slice(&(views.len() as u32).to_le_bytes());
    for view in views {
        out.extend_from_slice(&(view.shape.len() as u32).to_le_bytes());
        for &dim in view.shape {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for value in view.data {
            out.extend_from_slice(&value.to_le_bytes());
        }
    }

    let tokens = model.vocab.tokens();
    out.extend_from_slice(&(tokens.len() as u32).to_le_bytes());
    for token in tokens {
        out.extend_from_slice(&(token.len() as u32).to_le_bytes());
        out.extend_from_slice(token.as_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let chunk = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(chunk)
            }
            None => Err(CheckpointError::Truncated(what)),
        }
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Model, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = r.u32("config")? as usize;
    }
    let seed = r.u64("config")?;
    let mode_id = r.u8("config")?;
    let mode = EnrichmentMode::from_id(mode_id)
        .ok_or_else(|| CheckpointError::Invalid(format!("unknown enrichment mode id {mode_id}")))?;
    let config = ModelConfig {
        seq_len: dims[0],
        d_model: dims[1],
        n_heads: dims[2],
        n_layers: dims[3],
        d_ff: dims[4],
        vocab_size: dims[5],
        tagset_size: dims[6],
        seed,
        mode,
    };
    config
        .validate()
        .map_err(|e| CheckpointError::Invalid(e.to_string()))?;

    let expected = ModelParameters::expected_shapes(&config);
    let count = r.u32("tensor count")? as usize;
    if count != expected.len() {
        return Err(CheckpointError::Invalid(format!(
            "{count} tensors stored, config requires {}",
            expected.len()
        )));
    }
    let mut params = ModelParameters::zeros(&config);
    let names: Vec<&'static str> = params.views().iter().map(|v| v.name).collect();
    for (t, (target, shape)) in params.slices_mut().into_iter().zip(&expected).enumerate() {
        let rank = r.u32("tensor header")? as usize;
        let mut found = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            found.push(r.u32("tensor header")? as usize);
        }
        if &found != shape {
            return Err(CheckpointError::ShapeMismatch {
                name: names[t].to_owned(),
                found,
                expected: shape.clone(),
            });
        }
        let raw = r.take(target.len() * 8, "tensor data")?;
        for (dst, chunk) in target.iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }

    let vocab_len = r.u32("vocabulary")? as usize;
    let mut tokens = Vec::with_capacity(vocab_len.min(1 << 20));
    for _ in 0..vocab_len {
        let len = r.u32("vocabulary")? as usize;
        let raw = r.take(len, "vocabulary")?;
        let token = std::str::from_utf8(raw)
            .map_err(|e| CheckpointError::Invalid(format!("vocabulary token is not UTF-8: {e}")))?;
        tokens.push(token.to_owned());
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Invalid(format!(
            "{} trailing bytes after vocabulary",
            bytes.len() - r.pos
        )));
    }
    let vocab = Vocabulary::from_tokens(tokens).map_err(|e| CheckpointError::Invalid(e.to_string()))?;
    Model::new(config, params, vocab).map_err(|e| CheckpointError::Invalid(e.to_string()))
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes)?)
}
