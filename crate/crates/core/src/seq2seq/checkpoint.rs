//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//! magic (8 bytes) · format version (u32) · config JSON (u64 length + bytes) ·
//! vocabulary (u64 count, then u32 length + bytes per non-reserved token) ·
//! tensors (u64 count, then per tensor: u32 name length + name, u32 rank,
//! u64 per dimension, f64 values) · SHA-256 of everything before it.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::model::{Parameters, Seq2SeqModel};
use super::vocab::Vocabulary;
use super::ModelConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VTS2SCKP";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

pub fn model_to_bytes(model: &Seq2SeqModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(&model.config).expect("config serialises");
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(&config);
    let entries = model.vocabulary.entries();
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for tok in entries {
        out.extend_from_slice(&(tok.len() as u32).to_le_bytes());
        out.extend_from_slice(tok.as_bytes());
    }
    let tensors = model.params.tensors();
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (name, shape, data) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Hex SHA-256 of the serialised checkpoint.
pub fn model_digest(model: &Seq2SeqModel) -> String {
    Sha256::digest(model_to_bytes(model)).iter().map(|b| format!("{b:02x}")).collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::CorruptCheckpoint("unexpected end of data".into()))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::CorruptCheckpoint("length overflow".into()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::CorruptCheckpoint("invalid UTF-8".into()))
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Seq2SeqModel> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 + DIGEST_LEN {
        return Err(Error::CorruptCheckpoint(format!("file too short ({} bytes)", bytes.len())));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::CorruptCheckpoint("content digest mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
        return Err(Error::CorruptCheckpoint("not a model checkpoint".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version(format!("unsupported checkpoint format version {version}")));
    }
    let n = r.len()?;
    let config: ModelConfig = serde_json::from_slice(r.take(n)?)
        .map_err(|e| Error::Version(format!("checkpoint config not understood: {e}")))?;
    config.validate().map_err(|e| Error::Version(e.to_string()))?;
    let n_tokens = r.len()?;
    let mut tokens = Vec::with_capacity(n_tokens.min(body.len()));
    for _ in 0..n_tokens {
        tokens.push(r.string()?);
    }
    let vocabulary = Vocabulary::from_tokens(tokens)?;

    let mut params = Parameters::zeros(&config, vocabulary.len());
    let n_tensors = r.len()?;
    let mut slots = params.tensors_mut();
    if n_tensors != slots.len() {
        return Err(Error::Version(format!(
            "checkpoint has {n_tensors} tensors, configuration implies {}",
            slots.len()
        )));
    }
    for (name, shape, data) in slots.iter_mut() {
        let stored_name = r.string()?;
        let rank = r.u32()? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(r.len()?);
        }
        if stored_name != *name || dims != *shape {
            return Err(Error::Version(format!(
                "tensor {stored_name} {dims:?} does not match {name} {shape:?} implied by config and vocabulary"
            )));
        }
        for v in data.iter_mut() {
            *v = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        }
    }
    drop(slots);
    if r.pos != body.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes after tensors".into()));
    }
    if !params.all_finite() {
        return Err(Error::CorruptCheckpoint("non-finite parameter values".into()));
    }
    Ok(Seq2SeqModel { config, vocabulary, params })
}

pub fn save_model(model: &Seq2SeqModel, path: &Path) -> Result<()> {
    fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Seq2SeqModel> {
    model_from_bytes(&fs::read(path)?)
}
