//! Checkpoint container: a magic line, one JSON header line, then the
//! parameters and buffers as little-endian 64-bit floats.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{Block, Layout, PolicyConfig};
use super::PolicyModel;
use crate::error::{CsgError, Result};
use crate::grid::write_atomic;

const MAGIC: &[u8] = b"CSGCKPT1\n";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: PolicyConfig,
    pub vocab_sha256: String,
    pub blocks: Vec<Block>,
    pub n_params: usize,
    pub n_buffers: usize,
}

fn bad(message: impl Into<String>) -> CsgError {
    CsgError::Format { what: "checkpoint", message: message.into() }
}

impl Checkpoint {
    /// Parses only the header; returns it with the offset of the raw values.
    pub fn peek(bytes: &[u8]) -> Result<(Self, usize)> {
        let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| bad("missing magic line"))?;
        let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header"))?;
        Ok((serde_json::from_slice(&rest[..nl])?, MAGIC.len() + nl + 1))
    }
}

impl PolicyModel {
    pub fn to_checkpoint_bytes(&self, vocab_sha256: &str) -> Result<Vec<u8>> {
        let header = Checkpoint {
            config: self.config.clone(),
            vocab_sha256: vocab_sha256.to_string(),
            blocks: self.layout.blocks.clone(),
            n_params: self.params.len(),
            n_buffers: self.buffers.len(),
        };
        let mut out = MAGIC.to_vec();
        out.extend(serde_json::to_vec(&header)?);
        out.push(b'\n');
        for v in self.params.iter().chain(&self.buffers) {
            out.extend(v.to_le_bytes());
        }
        Ok(out)
    }

    /// Parses a checkpoint, refusing it unless its vocabulary hash equals
    /// `vocab_sha256`.
    pub fn from_checkpoint_bytes(bytes: &[u8], vocab_sha256: &str) -> Result<Self> {
        let (header, start) = Checkpoint::peek(bytes)?;
        if header.vocab_sha256 != vocab_sha256 {
            return Err(CsgError::VocabMismatch { expected: header.vocab_sha256, found: vocab_sha256.to_string() });
        }
        header.config.check().map_err(CsgError::InvalidConfig)?;
        let layout = Layout::new(&header.config);
        if layout.blocks != header.blocks || layout.n_params != header.n_params || layout.n_buffers != header.n_buffers {
            return Err(bad("parameter blocks do not match the configuration"));
        }
        let data = &bytes[start..];
        let n = header.n_params + header.n_buffers;
        if data.len() != 8 * n {
            return Err(bad(format!("expected {} bytes of parameters, found {}", 8 * n, data.len())));
        }
        let mut values: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let buffers = values.split_off(header.n_params);
        Ok(Self { config: header.config, layout, params: values, buffers })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &PolicyModel, vocab_sha256: &str) -> Result<()> {
    write_atomic(path, &model.to_checkpoint_bytes(vocab_sha256)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>, vocab_sha256: &str) -> Result<PolicyModel> {
    PolicyModel::from_checkpoint_bytes(&std::fs::read(path)?, vocab_sha256)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::Mode;

    fn model() -> PolicyModel {
        let cfg = PolicyConfig { conv_widths: vec![2, 2], d_enc: 5, d_emb: 3, d_h: 4, ..PolicyConfig::desk(Mode::Three, 9) };
        PolicyModel::new(cfg, 8).unwrap()
    }

    #[test]
    fn round_trip() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &m, "abc").unwrap();
        let back = load_checkpoint(&path, "abc").unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.buffers, m.buffers);
        assert_eq!(back.config, m.config);
    }

    #[test]
    fn refuses_other_vocabulary() {
        let bytes = model().to_checkpoint_bytes("abc").unwrap();
        assert!(matches!(PolicyModel::from_checkpoint_bytes(&bytes, "abd"), Err(CsgError::VocabMismatch { .. })));
    }

    #[test]
    fn rejects_truncation() {
        let bytes = model().to_checkpoint_bytes("abc").unwrap();
        assert!(PolicyModel::from_checkpoint_bytes(&bytes[..bytes.len() - 3], "abc").is_err());
        assert!(PolicyModel::from_checkpoint_bytes(b"nope", "abc").is_err());
    }
}
