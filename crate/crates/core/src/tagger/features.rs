use std::hash::Hasher;

use fnv::FnvHasher;

/// Hashed sparse features of one token; every active feature has value 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureVector {
    pub ids: Vec<u32>,
}

/// Feature extractor over a fixed hash space of `2^bits` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Featurizer {
    pub bits: u32,
    pub seed: u64,
}

const WINDOW: i64 = 2;

/// Coarse character-class pattern with runs collapsed, e.g. `Xx`, `d`, `.`.
pub fn shape(token: &str) -> String {
    let mut out = String::new();
    for c in token.chars() {
        let k = if c.is_uppercase() {
            'X'
        } else if c.is_lowercase() {
            'x'
        } else if c.is_numeric() {
            'd'
        } else {
            c
        };
        if !out.ends_with(k) {
            out.push(k);
        }
    }
    out
}

impl Featurizer {
    pub fn new(bits: u32, seed: u64) -> Self {
        Featurizer { bits, seed }
    }

    pub fn rows(&self) -> usize {
        1usize << self.bits
    }

    /// Row of the always-active bias feature.
    pub fn bias_id(&self) -> u32 {
        self.id(0, 0, "")
    }

    fn id(&self, offset: i64, kind: u8, value: &str) -> u32 {
        let mut h = FnvHasher::with_key(0xcbf2_9ce4_8422_2325 ^ self.seed);
        h.write_i64(offset);
        h.write_u8(kind);
        h.write(value.as_bytes());
        (h.finish() & ((1u64 << self.bits) - 1)) as u32
    }

    /// Features of token `index`: bias, then for each window position the
    /// lowercased form, its shape and its character 2..4-grams.
    pub fn extract<S: AsRef<str>>(&self, tokens: &[S], index: usize) -> FeatureVector {
        let mut ids = vec![self.bias_id()];
        for d in -WINDOW..=WINDOW {
            let j = index as i64 + d;
            if j < 0 || j >= tokens.len() as i64 {
                ids.push(self.id(d, 1, if j < 0 { "<s>" } else { "</s>" }));
                continue;
            }
            let tok = tokens[j as usize].as_ref();
            let lower = tok.to_lowercase();
            ids.push(self.id(d, 2, &lower));
            ids.push(self.id(d, 3, &shape(tok)));
            let marked: Vec<char> = std::iter::once('^').chain(lower.chars()).chain(std::iter::once('$')).collect();
            for n in 2..=4 {
                for g in marked.windows(n) {
                    ids.push(self.id(d, 4, &g.iter().collect::<String>()));
                }
            }
        }
        FeatureVector { ids }
    }

    pub fn extract_all<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<FeatureVector> {
        (0..tokens.len()).map(|i| self.extract(tokens, i)).collect()
    }
}
