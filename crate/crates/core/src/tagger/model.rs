use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Featurizer, Strategy};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tagcodec::{Format, Mode};

pub const MODEL_MAGIC: &str = "nested-tagger-model";
pub const MODEL_VERSION: u32 = 1;

/// Source of per-token logits, one matrix per head.
pub trait LogitsProvider<T> {
    fn num_heads(&self) -> usize;
    fn vocabulary(&self, head: usize) -> &[String];
    /// One logit row per token, each as long as the head's vocabulary.
    fn logits(&self, head: usize, tokens: &[&str]) -> Vec<Vec<T>>;
}

/// One linear map from hashed features to tag logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Head<T> {
    pub mode: Mode,
    pub vocab: Vec<String>,
    /// Row-major `rows x vocab.len()`.
    pub weights: Vec<T>,
}

impl<T: Scalar> Head<T> {
    pub fn zeros(mode: Mode, vocab: Vec<String>, rows: usize) -> Self {
        let n = rows * vocab.len();
        Head { mode, vocab, weights: vec![T::zero(); n] }
    }

    pub fn width(&self) -> usize {
        self.vocab.len()
    }

    pub fn row(&self, r: usize) -> &[T] {
        let w = self.width();
        &self.weights[r * w..(r + 1) * w]
    }

    /// Sum of the rows of the active features.
    pub fn score(&self, ids: &[u32]) -> Vec<T> {
        let w = self.width();
        let mut z = vec![T::zero(); w];
        for &id in ids {
            for (acc, &x) in z.iter_mut().zip(self.row(id as usize)) {
                *acc = *acc + x;
            }
        }
        z
    }

    pub fn nonzero_rows(&self) -> usize {
        let w = self.width();
        self.weights.chunks(w).filter(|r| r.iter().any(|x| !x.is_zero())).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub strategy: Strategy,
    pub format: Format,
    pub schema_fingerprint: String,
    pub featurizer: Featurizer,
    pub heads: Vec<Head<T>>,
}

#[derive(Serialize, Deserialize)]
struct HeadHeader {
    mode: Mode,
    vocab: Vec<String>,
    rows: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    magic: String,
    version: u32,
    scalar: String,
    strategy: Strategy,
    format: Format,
    schema_fingerprint: String,
    hash_bits: u32,
    hash_seed: u64,
    heads: Vec<HeadHeader>,
}

impl<T: Scalar> Model<T> {
    /// Number of trainable heads: two for `M1`, one otherwise.
    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.heads.iter().map(|h| h.weights.len()).sum()
    }

    /// Serialized form: one JSON header line, then per head the non-zero
    /// rows as little-endian `u32` row index followed by the row's weights.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            magic: MODEL_MAGIC.to_string(),
            version: MODEL_VERSION,
            scalar: T::NAME.to_string(),
            strategy: self.strategy,
            format: self.format,
            schema_fingerprint: self.schema_fingerprint.clone(),
            hash_bits: self.featurizer.bits,
            hash_seed: self.featurizer.seed,
            heads: self
                .heads
                .iter()
                .map(|h| HeadHeader { mode: h.mode, vocab: h.vocab.clone(), rows: h.nonzero_rows() })
                .collect(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        for h in &self.heads {
            for (r, row) in h.weights.chunks(h.width()).enumerate() {
                if row.iter().any(|x| !x.is_zero()) {
                    out.extend_from_slice(&(r as u32).to_le_bytes());
                    for &x in row {
                        x.write_le(&mut out);
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Model("missing header line".into()))?;
        let header: Header = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| Error::Model(format!("bad header: {e}")))?;
        if header.magic != MODEL_MAGIC {
            return Err(Error::Model("not a model file".into()));
        }
        if header.version != MODEL_VERSION {
            return Err(Error::Model(format!("unsupported model version {}", header.version)));
        }
        if header.scalar != T::NAME {
            return Err(Error::Model(format!("model holds {} weights, expected {}", header.scalar, T::NAME)));
        }
        if !(1..=24).contains(&header.hash_bits) {
            return Err(Error::Model(format!("bad hash size {}", header.hash_bits)));
        }
        let featurizer = Featurizer::new(header.hash_bits, header.hash_seed);
        let rows = featurizer.rows();
        let mut pos = nl + 1;
        let mut heads = Vec::with_capacity(header.heads.len());
        for hh in header.heads {
            let mut head = Head::zeros(hh.mode, hh.vocab, rows);
            let w = head.width();
            let record = 4 + w * T::BYTES;
            for _ in 0..hh.rows {
                let chunk = bytes
                    .get(pos..pos + record)
                    .ok_or_else(|| Error::Model("truncated weights".into()))?;
                let r = u32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as usize;
                if r >= rows {
                    return Err(Error::Model(format!("row {r} outside the feature space")));
                }
                for (k, slot) in head.weights[r * w..(r + 1) * w].iter_mut().enumerate() {
                    *slot = T::read_le(&chunk[4 + k * T::BYTES..]);
                }
                pos += record;
            }
            heads.push(head);
        }
        if pos != bytes.len() {
            return Err(Error::Model("trailing bytes after weights".into()));
        }
        let expected = header.strategy.head_modes();
        if heads.len() != expected.len() || heads.iter().zip(expected).any(|(h, m)| h.mode != *m) {
            return Err(Error::Model(format!("heads do not match strategy {}", header.strategy)));
        }
        Ok(Model {
            strategy: header.strategy,
            format: header.format,
            schema_fingerprint: header.schema_fingerprint,
            featurizer,
            heads,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl<T: Scalar> LogitsProvider<T> for Model<T> {
    fn num_heads(&self) -> usize {
        self.heads.len()
    }

    fn vocabulary(&self, head: usize) -> &[String] {
        &self.heads[head].vocab
    }

    fn logits(&self, head: usize, tokens: &[&str]) -> Vec<Vec<T>> {
        let h = &self.heads[head];
        self.featurizer
            .extract_all(tokens)
            .iter()
            .map(|f| h.score(&f.ids))
            .collect()
    }
}
