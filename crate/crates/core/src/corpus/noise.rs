use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tagcodec::AnnotatedEntry;

/// Relative weights of the three character edits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseMix {
    pub substitute: f64,
    pub delete: f64,
    pub insert: f64,
}

impl Default for NoiseMix {
    fn default() -> Self {
        NoiseMix { substitute: 0.6, delete: 0.2, insert: 0.2 }
    }
}

/// Character-level OCR error model.
///
/// Each character is edited with probability `rate`, the edit drawn from
/// `mix`. Digits receive an additional substitution with probability
/// `rate * digit_bias`, so the default bias of 1 doubles their error rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub rate: f64,
    pub mix: NoiseMix,
    pub digit_bias: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { rate: 0.05, mix: NoiseMix::default(), digit_bias: 1.0, seed: 0 }
    }
}

impl NoiseConfig {
    pub fn with_rate(rate: f64, seed: u64) -> Self {
        NoiseConfig { rate, seed, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.mix;
        let weights = [m.substitute, m.delete, m.insert];
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::Config(format!("noise rate {} outside [0, 1]", self.rate)));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("noise mix weights must be non-negative and sum to 1".into()));
        }
        if !self.digit_bias.is_finite() || self.digit_bias < 0.0 {
            return Err(Error::Config(format!("invalid digit bias {}", self.digit_bias)));
        }
        Ok(())
    }
}

const FILLER: &[char] = &['a', 'e', 'i', 'n', 'r', 's', 't', 'u', 'l', 'o', 'c', 'm'];

fn confusable(c: char) -> &'static [char] {
    match c {
        '0' => &['o', 'O', '(', ')'],
        '1' => &['l', 'I', '|', '!'],
        '2' => &['z', '?'],
        '3' => &['8', '}'],
        '4' => &['A', '+'],
        '5' => &['S', '$'],
        '6' => &['b', '('],
        '7' => &['/', 'T'],
        '8' => &['B', '&'],
        '9' => &['g', ')'],
        'l' => &['1', 'I', 'i'],
        'i' => &['l', 'j', 'î'],
        'o' => &['0', 'c', 'e'],
        'e' => &['c', 'é', 'o'],
        'n' => &['u', 'm', 'r'],
        'u' => &['n', 'v'],
        'm' => &['n', 'w'],
        'r' => &['n', 't'],
        'c' => &['e', 'o'],
        '.' => &[',', ':'],
        ',' => &['.', ';'],
        _ => &[],
    }
}

fn substitute(c: char, rng: &mut ChaCha8Rng) -> char {
    let conf = confusable(c);
    if !conf.is_empty() && rng.gen_bool(0.8) {
        return conf[rng.gen_range(0..conf.len())];
    }
    loop {
        let r = FILLER[rng.gen_range(0..FILLER.len())];
        if r != c {
            return r;
        }
    }
}

/// Applies the noise model with an explicit generator; returns the noisy
/// text and the number of edits made.
pub fn noise_inject_with(text: &str, cfg: &NoiseConfig, rng: &mut ChaCha8Rng) -> (String, usize) {
    let mut out = String::with_capacity(text.len());
    let mut edits = 0;
    for c in text.chars() {
        let mut c = c;
        if c.is_ascii_digit() && cfg.digit_bias > 0.0 && rng.gen_bool((cfg.rate * cfg.digit_bias).min(1.0)) {
            c = substitute(c, rng);
            edits += 1;
        }
        if cfg.rate > 0.0 && rng.gen_bool(cfg.rate) {
            edits += 1;
            let u: f64 = rng.gen();
            if u < cfg.mix.substitute {
                out.push(substitute(c, rng));
            } else if u >= cfg.mix.substitute + cfg.mix.delete {
                out.push(c);
                out.push(FILLER[rng.gen_range(0..FILLER.len())]);
            }
        } else {
            out.push(c);
        }
    }
    (out, edits)
}

pub fn noise_inject(text: &str, cfg: &NoiseConfig) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_inject_with(text, cfg, &mut rng).0
}

/// Noisy text for every entry, each on its own generator stream.
pub fn noisy_texts(entries: &[AnnotatedEntry], cfg: &NoiseConfig) -> Vec<(String, String)> {
    entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            (e.source_id.clone(), noise_inject_with(&e.text, cfg, &mut rng).0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_is_identity() {
        let cfg = NoiseConfig::with_rate(0.0, 3);
        assert_eq!(noise_inject("Dufour, r. de Vaugirard, 7", &cfg), "Dufour, r. de Vaugirard, 7");
    }

    #[test]
    fn full_deletion_empties() {
        let cfg = NoiseConfig {
            rate: 1.0,
            mix: NoiseMix { substitute: 0.0, delete: 1.0, insert: 0.0 },
            digit_bias: 0.0,
            seed: 1,
        };
        assert_eq!(noise_inject("abc 123", &cfg), "");
    }

    #[test]
    fn deterministic_per_seed() {
        let text = "Vve Martin, blanchisseuse, r. du Temple, 14".repeat(10);
        let a = noise_inject(&text, &NoiseConfig::with_rate(0.1, 7));
        assert_eq!(a, noise_inject(&text, &NoiseConfig::with_rate(0.1, 7)));
        assert_ne!(a, noise_inject(&text, &NoiseConfig::with_rate(0.1, 8)));
    }

    #[test]
    fn validation() {
        assert!(NoiseConfig::default().validate().is_ok());
        assert!(NoiseConfig::with_rate(1.5, 0).validate().is_err());
        let mut c = NoiseConfig::default();
        c.mix.insert = 0.5;
        assert!(c.validate().is_err());
        c = NoiseConfig::default();
        c.digit_bias = -1.0;
        assert!(c.validate().is_err());
    }
}
