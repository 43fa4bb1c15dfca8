//! Hashed-feature linear tagger and the three nested strategies plus a flat
//! baseline.
//!
//! * `M1`: one head per level, trained independently; predictions are merged
//!   with [`compose_joint`](crate::tagcodec::compose_joint).
//! * `M2`: one head over joint tags, categorical cross-entropy.
//! * `M3`: one head over joint tags, hierarchical cross-entropy on the
//!   schema's label tree.
//! * `Flat`: one head over flat-mapped tags.

mod features;
mod model;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use features::{shape, FeatureVector, Featurizer};
pub use model::{Head, LogitsProvider, Model, MODEL_MAGIC, MODEL_VERSION};
pub use train::{train, train_with_history, EvalPoint, TrainHistory};

use crate::error::{Error, Result};
use crate::schema::LabelSchema;
use crate::tagcodec::{self, AnnotatedEntry, Entity, Format, Mode, TagSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    M1,
    M2,
    M3,
    #[serde(rename = "FLAT")]
    Flat,
}

impl Strategy {
    pub const NESTED: [Strategy; 3] = [Strategy::M1, Strategy::M2, Strategy::M3];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::M1 => "M1",
            Strategy::M2 => "M2",
            Strategy::M3 => "M3",
            Strategy::Flat => "FLAT",
        }
    }

    /// Tag modes of the heads this strategy trains.
    pub fn head_modes(self) -> &'static [Mode] {
        match self {
            Strategy::M1 => &[Mode::L1, Mode::L2],
            Strategy::M2 | Strategy::M3 => &[Mode::Joint],
            Strategy::Flat => &[Mode::L1],
        }
    }

    pub fn is_nested(self) -> bool {
        self != Strategy::Flat
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "M1" => Ok(Strategy::M1),
            "M2" => Ok(Strategy::M2),
            "M3" => Ok(Strategy::M3),
            "FLAT" => Ok(Strategy::Flat),
            _ => Err(Error::Config(format!("unknown strategy `{s}`"))),
        }
    }
}

/// Optimization settings. Defaults: learning rate 1e-4, weight decay 1e-5,
/// batch size 16, at most 5000 steps, patience 5 evaluations every 250 steps,
/// hierarchical loss decay 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub patience: usize,
    pub eval_every: usize,
    pub seed: u64,
    /// Edge-weight decay of the hierarchical loss (M3 only).
    pub hxe_alpha: f64,
    /// The feature space has `2^hash_bits` rows.
    pub hash_bits: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            batch_size: 16,
            max_steps: 5000,
            patience: 5,
            eval_every: 250,
            seed: 0,
            hxe_alpha: 0.5,
            hash_bits: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{what} must be positive")));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.learning_rate * self.weight_decay >= 1.0 {
            return Err(Error::Config("learning_rate * weight_decay must be below 1".into()));
        }
        if self.batch_size == 0 {
            return bad("batch_size");
        }
        if self.max_steps == 0 {
            return bad("max_steps");
        }
        if self.patience == 0 {
            return bad("patience");
        }
        if self.eval_every == 0 {
            return bad("eval_every");
        }
        if !(self.hxe_alpha.is_finite() && self.hxe_alpha >= 0.0) {
            return Err(Error::Config("hxe_alpha must be non-negative".into()));
        }
        if !(4..=24).contains(&self.hash_bits) {
            return Err(Error::Config("hash_bits must be within 4..=24".into()));
        }
        Ok(())
    }

    /// Parses a TOML document; missing keys keep their defaults.
    pub fn parse(doc: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(doc).map_err(|e| Error::parse("train config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_document(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Decodes per-head logits into the strategy's output sequence: a joint
/// sequence for nested strategies, a flat `L1` sequence for `Flat`.
/// Ties go to the lowest tag index.
pub fn decode_logits<T: PartialOrd + Copy>(
    strategy: Strategy,
    format: Format,
    vocabs: &[&[String]],
    logits: &[Vec<Vec<T>>],
) -> Result<TagSequence> {
    let modes = strategy.head_modes();
    if vocabs.len() != modes.len() || logits.len() != modes.len() {
        return Err(Error::Model(format!(
            "{strategy} needs {} heads, got {}",
            modes.len(),
            logits.len()
        )));
    }
    let seqs = modes
        .iter()
        .zip(vocabs)
        .zip(logits)
        .map(|((&mode, vocab), rows)| {
            let tags = rows
                .iter()
                .map(|z| {
                    if z.len() != vocab.len() {
                        return Err(Error::Model(format!(
                            "{} logits for a vocabulary of {}",
                            z.len(),
                            vocab.len()
                        )));
                    }
                    Ok(vocab[argmax(z)].clone())
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TagSequence { format, mode, tags })
        })
        .collect::<Result<Vec<_>>>()?;
    match strategy {
        Strategy::M1 => tagcodec::compose_joint(&seqs[0], &seqs[1]),
        _ => Ok(seqs.into_iter().next().expect("one head")),
    }
}

/// Predicted tags for a token sequence.
pub fn predict<T: crate::Scalar, S: AsRef<str>>(model: &Model<T>, tokens: &[S]) -> TagSequence {
    predict_with(model, model.strategy, model.format, tokens).expect("model heads match their vocabularies")
}

/// Prediction through any logits provider.
pub fn predict_with<T, P, S>(provider: &P, strategy: Strategy, format: Format, tokens: &[S]) -> Result<TagSequence>
where
    T: PartialOrd + Copy,
    P: LogitsProvider<T> + ?Sized,
    S: AsRef<str>,
{
    let tokens: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    let heads = provider.num_heads();
    let logits: Vec<Vec<Vec<T>>> = (0..heads).map(|h| provider.logits(h, &tokens)).collect();
    let vocabs: Vec<&[String]> = (0..heads).map(|h| provider.vocabulary(h)).collect();
    decode_logits(strategy, format, &vocabs, &logits)
}

/// Entities of a strategy's output sequence. Flat predictions become
/// level-1 entities of flat types.
pub fn sequence_entities(seq: &TagSequence) -> Vec<Entity> {
    tagcodec::decode(seq).expect("predicted tags come from a vocabulary")
}

/// Predicted copy of `entry` (same id, text and tokens).
pub fn predict_entry<T: crate::Scalar>(model: &Model<T>, entry: &AnnotatedEntry) -> AnnotatedEntry {
    let seq = predict(model, &entry.token_texts());
    AnnotatedEntry {
        entities: sequence_entities(&seq),
        ..entry.clone()
    }
}

/// Gold entry restated in flat types, for scoring the flat baseline.
pub fn flat_view(entry: &AnnotatedEntry, format: Format, schema: &LabelSchema) -> AnnotatedEntry {
    let seq = tagcodec::flat_tags(&entry.entities, entry.len(), format, schema);
    AnnotatedEntry {
        entities: sequence_entities(&seq),
        ..entry.clone()
    }
}
