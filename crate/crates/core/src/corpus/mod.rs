//! Corpora: file formats, splitting, and the synthetic generator with its
//! OCR-noise model.

mod io;
mod noise;
mod synth;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use io::{
    read_jsonl, read_noisy_texts, read_tsv, read_tsv_checked, write_jsonl, write_noisy_texts, write_tsv,
    write_tsv_layout, TsvLayout, TSV_HEADER,
};
pub use noise::{noise_inject, noise_inject_with, noisy_texts, NoiseConfig};
pub use synth::{synth_generate, Lexicon};

use crate::error::{Error, Result};
use crate::schema::LabelSchema;
use crate::tagcodec::{AnnotatedEntry, Format};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Gold,
    Noisy,
    Synthetic,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Gold => "gold",
            Provenance::Noisy => "noisy",
            Provenance::Synthetic => "synthetic",
        })
    }
}

/// A validated set of entries with unique source ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub entries: Vec<AnnotatedEntry>,
    pub schema_fingerprint: String,
    pub provenance: Provenance,
}

impl Corpus {
    pub fn new(entries: Vec<AnnotatedEntry>, schema: &LabelSchema, provenance: Provenance) -> Result<Self> {
        let mut ids = HashSet::new();
        for e in &entries {
            if !ids.insert(e.source_id.as_str()) {
                return Err(Error::entry(&e.source_id, "duplicate source id"));
            }
            e.validate(schema)?;
        }
        Ok(Corpus {
            entries,
            schema_fingerprint: schema.fingerprint(),
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Loads a `.tsv` or `.jsonl` file, chosen by extension.
    pub fn load(path: &Path, schema: &LabelSchema, provenance: Provenance) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let entries = match extension(path) {
            FileKind::Tsv => read_tsv(&text, schema)?,
            FileKind::Jsonl => read_jsonl(&text, schema)?,
        };
        Self::new(entries, schema, provenance)
    }

    /// Writes by extension; TSV uses `format` for its tag columns.
    pub fn save(&self, path: &Path, format: Format) -> Result<()> {
        let text = match extension(path) {
            FileKind::Tsv => write_tsv(&self.entries, format),
            FileKind::Jsonl => write_jsonl(&self.entries)?,
        };
        std::fs::write(path, text)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Tsv,
    Jsonl,
}

impl FromStr for FileKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" | "conll" => Ok(FileKind::Tsv),
            "jsonl" | "json" => Ok(FileKind::Jsonl),
            _ => Err(Error::Config(format!("unknown corpus file kind `{s}`"))),
        }
    }
}

pub fn extension(path: &Path) -> FileKind {
    path.extension()
        .and_then(|e| e.to_str())
        .and_then(|e| e.parse().ok())
        .unwrap_or(FileKind::Tsv)
}

/// Split sizes: `floor(n * r_train)`, `floor(n * r_dev)`, remainder to test.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !r.is_finite() || *r < 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be non-negative and sum to 1, got {a}, {b}, {c}"
        )));
    }
    let floor = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
    let train = floor(a).min(n);
    let dev = floor(b).min(n - train);
    Ok((train, dev, n - train - dev))
}

/// Seeded shuffle of indices partitioned by [`split_sizes`].
pub fn split_indices(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    if n < 3 {
        return Err(Error::Config(format!("cannot split {n} entries (need at least 3)")));
    }
    let (train, dev, _) = split_sizes(n, ratios)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(train + dev);
    let dev = idx.split_off(train);
    Ok((idx, dev, test))
}

pub fn split(
    entries: &[AnnotatedEntry],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<AnnotatedEntry>, Vec<AnnotatedEntry>, Vec<AnnotatedEntry>)> {
    let (a, b, c) = split_indices(entries.len(), ratios, seed)?;
    let pick = |ix: Vec<usize>| ix.into_iter().map(|i| entries[i].clone()).collect();
    Ok((pick(a), pick(b), pick(c)))
}
