//! Self-describing binary checkpoint for [`NGramScorer`].
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"SPECGRNG" | u32 preamble_len | preamble JSON
//! unigram counts: vocab_size x u64
//! num_contexts records, sorted by (length, tokens):
//!     u32 len | len x u32 token | u64 total | u32 n | n x (u32 token, u32 count)
//! token vectors: vocab_size x embedding_dim x f32
//! ```

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ngram::{ContextCounts, NGramConfig, NGramScorer};
use super::ModelError;
use crate::catalog::Token;
use crate::matrix::Matrix;

const MAGIC: &[u8; 8] = b"SPECGRNG";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointPreamble {
    pub version: u32,
    pub order: usize,
    pub vocab_size: usize,
    pub smoothing: f64,
    pub embedding_dim: usize,
    pub num_contexts: usize,
}

pub fn write_checkpoint<W: Write>(model: &NGramScorer, mut out: W) -> Result<(), ModelError> {
    let preamble = CheckpointPreamble {
        version: FORMAT_VERSION,
        order: model.config.order,
        vocab_size: model.vocab_size,
        smoothing: model.config.smoothing,
        embedding_dim: model.config.embedding_dim,
        num_contexts: model.contexts.len(),
    };
    let json = serde_json::to_vec(&preamble)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for &c in &model.unigram {
        buf.extend_from_slice(&c.to_le_bytes());
    }
    let mut keys: Vec<&Box<[Token]>> = model.contexts.keys().collect();
    keys.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    for key in keys {
        let counts = &model.contexts[key];
        buf.extend_from_slice(&(key.len() as u32).to_le_bytes());
        for &t in key.iter() {
            buf.extend_from_slice(&t.to_le_bytes());
        }
        buf.extend_from_slice(&counts.total.to_le_bytes());
        buf.extend_from_slice(&(counts.successors.len() as u32).to_le_bytes());
        for &(t, c) in &counts.successors {
            buf.extend_from_slice(&t.to_le_bytes());
            buf.extend_from_slice(&c.to_le_bytes());
        }
    }
    for v in model.token_vectors.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelError::Format {
                offset: self.bytes.len() as u64,
                message: format!("unexpected end of checkpoint, needed {n} more bytes"),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn error(&self, message: impl Into<String>) -> ModelError {
        ModelError::Format {
            offset: self.pos as u64,
            message: message.into(),
        }
    }
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<NGramScorer, ModelError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(8)? != MAGIC {
        return Err(ModelError::Format {
            offset: 0,
            message: "not an n-gram checkpoint".into(),
        });
    }
    let len = cur.u32()? as usize;
    let preamble: CheckpointPreamble =
        serde_json::from_slice(cur.take(len)?).map_err(|e| cur.error(e.to_string()))?;
    if preamble.version != FORMAT_VERSION {
        return Err(cur.error(format!("unsupported version {}", preamble.version)));
    }
    let v = preamble.vocab_size;
    let mut unigram = Vec::with_capacity(v);
    for _ in 0..v {
        unigram.push(cur.u64()?);
    }
    let mut contexts = HashMap::with_capacity(preamble.num_contexts);
    for _ in 0..preamble.num_contexts {
        let n = cur.u32()? as usize;
        let mut key = Vec::with_capacity(n);
        for _ in 0..n {
            let t = cur.u32()?;
            if t as usize >= v {
                return Err(cur.error(format!("context token {t} outside vocabulary")));
            }
            key.push(t);
        }
        let total = cur.u64()?;
        let m = cur.u32()? as usize;
        let mut successors = Vec::with_capacity(m);
        for _ in 0..m {
            let t = cur.u32()?;
            let c = cur.u32()?;
            successors.push((t, c));
        }
        contexts.insert(key.into_boxed_slice(), ContextCounts { total, successors });
    }
    let d = preamble.embedding_dim;
    let mut data = Vec::with_capacity(v * d);
    for _ in 0..v * d {
        data.push(f32::from_le_bytes(cur.take(4)?.try_into().unwrap()));
    }
    if cur.pos != bytes.len() {
        return Err(cur.error("trailing bytes after checkpoint"));
    }
    let config = NGramConfig {
        order: preamble.order,
        smoothing: preamble.smoothing,
        embedding_dim: d,
    };
    Ok(NGramScorer::from_tables(
        config,
        v,
        unigram,
        contexts,
        Matrix::from_vec(v, d, data),
    ))
}

impl NGramScorer {
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let file = std::fs::File::create(path)?;
        write_checkpoint(self, std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        read_checkpoint(std::fs::File::open(path)?)
    }
}
