//! Binary checkpoint container.
//!
//! All integers are little-endian; strings are a `u32` byte length followed
//! by UTF-8 bytes.
//!
//! ```text
//! magic      8 bytes  "HJCLCKPT"
//! version    u32      1
//! metadata   u32 count, then count x (key string, value string)
//! taxonomy   string   sha256 hex of the canonical taxonomy TSV
//! vocab      u32 count, then count x token string, id order
//! tensors    u32 count, then count x (name string, u64 rows, u64 cols,
//!                                     rows*cols f64 row-major)
//! checksum   32 bytes sha256 of every preceding byte
//! ```
//!
//! Metadata always holds the model config keys (`dim`, `heads`,
//! `gat_layers`, `vocab_size`, `encoder_layers`, `seed`) and `n_labels`;
//! anything else is carried through untouched.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{DataError, Vocab};
use crate::model::{ModelConfig, ModelError, ModelParams};
use crate::taxonomy::Taxonomy;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"HJCLCKPT";
pub const VERSION: u32 = 1;

const CONFIG_KEYS: [&str; 7] = ["dim", "heads", "gat_layers", "vocab_size", "encoder_layers", "seed", "n_labels"];

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint integrity check failed: checksum mismatch")]
    Integrity,
    #[error("checkpoint truncated")]
    Truncated,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint was trained on taxonomy {expected}, got {found}")]
    TaxonomyMismatch { expected: String, found: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab: Vocab,
    pub taxonomy_hash: String,
    /// Extra key/value pairs, e.g. the epoch and validation score.
    pub metadata: BTreeMap<String, String>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(CheckpointError::Truncated)?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| CheckpointError::Malformed(e.to_string()))
    }
}

impl Checkpoint {
    pub fn new(params: ModelParams, vocab: Vocab, taxonomy: &Taxonomy) -> Self {
        Self { params, vocab, taxonomy_hash: taxonomy.content_hash(), metadata: BTreeMap::new() }
    }

    fn config_entries(&self) -> Vec<(&'static str, String)> {
        let c = &self.params.config;
        let values = [c.dim, c.heads, c.gat_layers, c.vocab_size, c.encoder_layers];
        let mut out: Vec<(&'static str, String)> =
            CONFIG_KEYS[..5].iter().zip(values).map(|(k, v)| (*k, v.to_string())).collect();
        out.push(("seed", c.seed.to_string()));
        out.push(("n_labels", self.params.n_labels.to_string()));
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        let config = self.config_entries();
        let extra: Vec<_> = self.metadata.iter().filter(|(k, _)| !CONFIG_KEYS.contains(&k.as_str())).collect();
        w.u32((config.len() + extra.len()) as u32);
        for (k, v) in &config {
            w.str(k);
            w.str(v);
        }
        for (k, v) in extra {
            w.str(k);
            w.str(v);
        }
        w.str(&self.taxonomy_hash);
        w.u32(self.vocab.len() as u32);
        for t in self.vocab.tokens() {
            w.str(t);
        }
        let named = self.params.named();
        w.u32(named.len() as u32);
        for (name, t) in named {
            w.str(&name);
            w.u64(t.rows() as u64);
            w.u64(t.cols() as u64);
            for v in t.data() {
                w.0.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&w.0);
        w.0.extend_from_slice(&digest);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < MAGIC.len() + 4 + 32 {
            return Err(CheckpointError::Truncated);
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(CheckpointError::Integrity);
        }
        let mut r = Reader { buf: body, pos: MAGIC.len() };
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let mut metadata = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.str()?;
            let v = r.str()?;
            metadata.insert(k, v);
        }
        let num = |key: &str| -> Result<u64, CheckpointError> {
            metadata
                .get(key)
                .ok_or_else(|| CheckpointError::Malformed(format!("missing {key}")))?
                .parse()
                .map_err(|_| CheckpointError::Malformed(format!("bad {key}")))
        };
        let config = ModelConfig {
            dim: num("dim")? as usize,
            heads: num("heads")? as usize,
            gat_layers: num("gat_layers")? as usize,
            vocab_size: num("vocab_size")? as usize,
            encoder_layers: num("encoder_layers")? as usize,
            seed: num("seed")?,
        };
        let n_labels = num("n_labels")? as usize;
        for k in CONFIG_KEYS {
            metadata.remove(k);
        }
        let taxonomy_hash = r.str()?;
        let count = r.u32()? as usize;
        let mut tokens = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            tokens.push(r.str()?);
        }
        let vocab = Vocab::from_tokens(tokens).map_err(|e: DataError| CheckpointError::Malformed(e.to_string()))?;
        if vocab.len() != config.vocab_size {
            return Err(CheckpointError::Malformed(format!(
                "vocabulary has {} tokens, config says {}",
                vocab.len(),
                config.vocab_size
            )));
        }

        let mut params = ModelParams::init(&config, n_labels)?;
        let expected: Vec<(String, (usize, usize))> = params.named().into_iter().map(|(n, t)| (n, t.shape())).collect();
        let stored = r.u32()? as usize;
        if stored != expected.len() {
            return Err(CheckpointError::Malformed(format!("{stored} tensors, expected {}", expected.len())));
        }
        for ((want_name, want_shape), slot) in expected.iter().zip(params.tensors_mut()) {
            let name = r.str()?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            if &name != want_name || (rows, cols) != *want_shape {
                return Err(CheckpointError::Malformed(format!(
                    "tensor {name} {rows}x{cols}, expected {want_name} {}x{}",
                    want_shape.0, want_shape.1
                )));
            }
            let raw = r.take(rows * cols * 8)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            *slot = Tensor::from_vec(rows, cols, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        }
        if r.pos != body.len() {
            return Err(CheckpointError::Malformed("trailing bytes".into()));
        }
        Ok(Self { params, vocab, taxonomy_hash, metadata })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Fails unless `taxonomy` is the one the checkpoint was trained on.
    pub fn check_taxonomy(&self, taxonomy: &Taxonomy) -> Result<(), CheckpointError> {
        let found = taxonomy.content_hash();
        if found != self.taxonomy_hash {
            return Err(CheckpointError::TaxonomyMismatch { expected: self.taxonomy_hash.clone(), found });
        }
        Ok(())
    }
}
