//! Binary checkpoint: parameters, Adam state, step and config hash, sealed
//! with a SHA-256 of the payload.
//!
//! Layout (little endian):
//! `magic[8] version:u32 hash_len:u32 hash[hash_len] step:u64 adam_t:u64
//! n:u64 params[n]:f32 m[n]:f32 v[n]:f32 sha256[32]`

use std::path::Path;

use sha2::{Digest, Sha256};

use super::adam::AdamState;
use crate::network::StyleModel;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STYLPCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Upper bound on stored parameters, far above the network's size.
const MAX_PARAMS: u64 = 1 << 28;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub step: u64,
    pub params: Vec<f32>,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.params.len();
        let mut out = Vec::with_capacity(64 + self.config_hash.len() + 12 * n);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config_hash.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_hash.as_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.adam.t.to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        for block in [&self.params, &self.adam.m, &self.adam.v] {
            for v in block.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// Writes through a temporary file so an interrupted save never replaces
    /// a good checkpoint with a partial one.
    pub fn save(&self, path: &Path) -> Result<()> {
        if !self.params.iter().all(|v| v.is_finite()) {
            return Err(Error::domain(
                "refusing to checkpoint non-finite parameters",
            ));
        }
        let tmp = path.with_extension("ckpt.tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(Error::io(&tmp))?;
        std::fs::rename(&tmp, path).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(Error::io(path))?;
        parse_checkpoint(&bytes)
    }

    /// Refuses a checkpoint written under a different training config.
    pub fn verify_config(&self, expected_hash: &str) -> Result<()> {
        if self.config_hash != expected_hash {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint was written with config hash {} but the current config hashes to {expected_hash}",
                self.config_hash
            )));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<StyleModel<f32>> {
        let mut m = StyleModel::<f32>::build(0);
        m.set_flat_params(&self.params).map_err(|_| {
            Error::CheckpointMismatch(format!(
                "checkpoint holds {} parameters, the network has {}",
                self.params.len(),
                m.param_count()
            ))
        })?;
        Ok(m)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Corrupt {
                what: "checkpoint",
                reason: format!(
                    "truncated while reading {field} ({} bytes total)",
                    self.bytes.len()
                ),
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, field)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, field)?.try_into().expect("8 bytes"),
        ))
    }

    fn f32s(&mut self, n: usize, field: &str) -> Result<Vec<f32>> {
        let raw = self.take(n * 4, field)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let corrupt = |reason: String| Error::Corrupt {
        what: "checkpoint",
        reason,
    };
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint format version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let hash_len = r.u32("config hash length")? as usize;
    let hash = std::str::from_utf8(r.take(hash_len, "config hash")?)
        .map_err(|_| corrupt("config hash is not utf-8".into()))?
        .to_string();
    let step = r.u64("step")?;
    let t = r.u64("adam step")?;
    let n = r.u64("parameter count")?;
    if n > MAX_PARAMS {
        return Err(corrupt(format!("implausible parameter count {n}")));
    }
    let n = n as usize;
    let params = r.f32s(n, "parameters")?;
    let m = r.f32s(n, "first moments")?;
    let v = r.f32s(n, "second moments")?;
    let body_end = r.pos;
    let digest = r.take(32, "checksum")?;
    if r.pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    if Sha256::digest(&bytes[..body_end]).as_slice() != digest {
        return Err(corrupt("checksum mismatch".into()));
    }
    Ok(Checkpoint {
        config_hash: hash,
        step,
        params,
        adam: AdamState { m, v, t },
    })
}
