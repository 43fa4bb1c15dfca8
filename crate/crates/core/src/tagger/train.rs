use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{flat_view, FeatureVector, Featurizer, Head, Model, Strategy, TrainConfig};
use crate::error::{Error, Result};
use crate::hxe::{self, HxeConfig};
use crate::metrics::{match_items, Item};
use crate::scalar::Scalar;
use crate::schema::{LabelSchema, LabelTree, Level};
use crate::tagcodec::{self, AnnotatedEntry, Entity, Format, Mode, TagSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    /// Mean per-token loss over the steps since the previous evaluation.
    pub train_loss: f64,
    pub dev_f1: f64,
}

/// Per-head learning curves.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub heads: Vec<Vec<EvalPoint>>,
    pub best_step: Vec<usize>,
    pub best_dev_f1: Vec<f64>,
}

fn items(entities: &[Entity]) -> Vec<Item> {
    entities
        .iter()
        .map(|e| (format!("{}:{}", e.level, e.etype), e.start, e.end))
        .collect()
}

/// What a head sees of an entry: its gold tags and the entities it is
/// scored against on the dev set.
fn head_view(entry: &AnnotatedEntry, strategy: Strategy, mode: Mode, format: Format, schema: &LabelSchema) -> (TagSequence, Vec<Entity>) {
    if strategy == Strategy::Flat {
        let seq = tagcodec::flat_tags(&entry.entities, entry.len(), format, schema);
        return (seq, flat_view(entry, format, schema).entities);
    }
    let seq = tagcodec::encode_entities(&entry.entities, entry.len(), format, mode);
    let entities = match mode {
        Mode::Joint => entry.entities.clone(),
        Mode::L1 => entry.entities.iter().filter(|e| e.level == Level::One).cloned().collect(),
        Mode::L2 => entry
            .entities
            .iter()
            .filter(|e| e.level == Level::Two)
            .map(|e| Entity { parent: None, ..e.clone() })
            .collect(),
    };
    (seq, entities)
}

fn head_vocabulary(strategy: Strategy, mode: Mode, format: Format, schema: &LabelSchema) -> Vec<String> {
    if strategy == Strategy::Flat {
        tagcodec::flat_vocabulary(schema, format)
    } else {
        tagcodec::vocabulary(schema, format, mode)
    }
}

struct Prepared {
    features: Vec<Vec<FeatureVector>>,
    gold: Vec<Vec<usize>>,
    items: Vec<Vec<Item>>,
}

fn prepare(
    entries: &[AnnotatedEntry],
    features: &[Vec<FeatureVector>],
    strategy: Strategy,
    mode: Mode,
    format: Format,
    schema: &LabelSchema,
    vocab: &[String],
) -> Result<Prepared> {
    let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let mut gold = Vec::with_capacity(entries.len());
    let mut all_items = Vec::with_capacity(entries.len());
    for e in entries {
        let (seq, ents) = head_view(e, strategy, mode, format, schema);
        let ids = seq
            .tags
            .iter()
            .map(|t| {
                index.get(t.as_str()).copied().ok_or_else(|| {
                    Error::InvalidTag(format!("`{t}` in `{}` is not in the {mode} vocabulary", e.source_id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        gold.push(ids);
        all_items.push(items(&ents));
    }
    Ok(Prepared { features: features.to_vec(), gold, items: all_items })
}

enum Objective<T> {
    Ce,
    Hxe(LabelTree, HxeConfig<T>),
}

impl<T: Scalar> Objective<T> {
    fn loss_and_gradient(&self, z: &[T], gold: usize) -> Result<(T, Vec<T>)> {
        match self {
            Objective::Ce => hxe::ce_loss_and_gradient(z, gold),
            Objective::Hxe(tree, cfg) => hxe::hxe_loss_and_gradient(z, gold, tree, cfg),
        }
    }
}

fn argmax<T: Scalar>(z: &[T]) -> usize {
    let mut best = 0;
    for i in 1..z.len() {
        if z[i] > z[best] {
            best = i;
        }
    }
    best
}

fn dev_f1<T: Scalar>(head: &Head<T>, dev: &Prepared, format: Format) -> f64 {
    let mut acc = (0u64, 0u64, 0u64);
    for (feats, gold_items) in dev.features.iter().zip(&dev.items) {
        let tags = feats.iter().map(|f| head.vocab[argmax(&head.score(&f.ids))].clone()).collect();
        let seq = TagSequence { format, mode: head.mode, tags };
        let pred = tagcodec::decode(&seq).expect("vocabulary tags parse");
        let prf = match_items(gold_items, &items(&pred));
        acc = (acc.0 + prf.tp, acc.1 + prf.fp, acc.2 + prf.fn_);
    }
    crate::metrics::Prf::from_counts(acc.0, acc.1, acc.2).f1
}

fn fold<T: Scalar>(weights: &mut [T], scale: &mut T) {
    if *scale != T::one() {
        for w in weights.iter_mut() {
            *w = *w * *scale;
        }
        *scale = T::one();
    }
}

fn train_head<T: Scalar>(
    head: &mut Head<T>,
    train: &Prepared,
    dev: &Prepared,
    objective: &Objective<T>,
    format: Format,
    cfg: &TrainConfig,
    stream: u64,
) -> Result<(Vec<EvalPoint>, usize, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let lr = T::from_f64_lossy(cfg.learning_rate);
    let decay = T::one() - T::from_f64_lossy(cfg.learning_rate * cfg.weight_decay);
    let width = head.width();
    let n = train.features.len();

    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut scale = T::one();
    let mut history = Vec::new();
    let mut best: Option<(Vec<T>, usize, f64)> = None;
    let mut bad_evals = 0;
    let mut loss_sum = 0.0;
    let mut loss_tokens = 0usize;
    let mut updates: Vec<(usize, usize, Vec<T>)> = Vec::new();

    for step in 1..=cfg.max_steps {
        updates.clear();
        for _ in 0..cfg.batch_size.min(n) {
            if cursor == n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let e = order[cursor];
            cursor += 1;
            for (t, f) in train.features[e].iter().enumerate() {
                let z: Vec<T> = head.score(&f.ids).into_iter().map(|x| x * scale).collect();
                let (loss, g) = objective.loss_and_gradient(&z, train.gold[e][t])?;
                loss_sum += loss.as_f64();
                loss_tokens += 1;
                updates.push((e, t, g));
            }
        }
        let step_size = lr / scale;
        for (e, t, g) in &updates {
            for &id in &train.features[*e][*t].ids {
                let row = &mut head.weights[id as usize * width..(id as usize + 1) * width];
                for (w, &gk) in row.iter_mut().zip(g) {
                    *w = *w - step_size * gk;
                }
            }
        }
        scale = scale * decay;
        if scale < T::from_f64_lossy(1e-3) {
            fold(&mut head.weights, &mut scale);
        }

        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            fold(&mut head.weights, &mut scale);
            let f1 = dev_f1(head, dev, format);
            let train_loss = if loss_tokens > 0 { loss_sum / loss_tokens as f64 } else { 0.0 };
            if !train_loss.is_finite() {
                return Err(Error::NonFinite);
            }
            history.push(EvalPoint { step, train_loss, dev_f1: f1 });
            loss_sum = 0.0;
            loss_tokens = 0;
            if best.as_ref().map_or(true, |b| f1 > b.2) {
                best = Some((head.weights.clone(), step, f1));
                bad_evals = 0;
            } else {
                bad_evals += 1;
                if bad_evals >= cfg.patience {
                    break;
                }
            }
        }
    }
    let (weights, step, f1) = best.expect("at least one evaluation runs");
    head.weights = weights;
    Ok((history, step, f1))
}

/// Sets the bias row to centered log tag frequencies of the training data.
fn init_bias<T: Scalar>(head: &mut Head<T>, train: &Prepared, bias: u32) {
    let w = head.width();
    let mut counts = vec![1.0f64; w];
    for g in train.gold.iter().flatten() {
        counts[*g] += 1.0;
    }
    let logs: Vec<f64> = counts.iter().map(|c| c.ln()).collect();
    let m = logs.iter().sum::<f64>() / w as f64;
    let row = bias as usize * w;
    for (k, l) in logs.iter().enumerate() {
        head.weights[row + k] = T::from_f64_lossy(l - m);
    }
}

/// Trains a model; see [`train_with_history`].
pub fn train<T: Scalar>(
    train: &[AnnotatedEntry],
    dev: &[AnnotatedEntry],
    strategy: Strategy,
    format: Format,
    schema: &LabelSchema,
    cfg: &TrainConfig,
) -> Result<Model<T>> {
    train_with_history(train, dev, strategy, format, schema, cfg).map(|(m, _)| m)
}

/// Mini-batch SGD with decoupled weight decay and early stopping on dev F1
/// (scope All for nested heads, the head's own level for `M1`, flat spans
/// for `Flat`). The loss is summed over the tokens of a batch. Each head
/// keeps its best-on-dev weights.
pub fn train_with_history<T: Scalar>(
    train: &[AnnotatedEntry],
    dev: &[AnnotatedEntry],
    strategy: Strategy,
    format: Format,
    schema: &LabelSchema,
    cfg: &TrainConfig,
) -> Result<(Model<T>, TrainHistory)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    if dev.is_empty() {
        return Err(Error::Config("dev corpus is empty".into()));
    }
    for e in train.iter().chain(dev) {
        e.validate(schema)?;
    }
    let featurizer = Featurizer::new(cfg.hash_bits, cfg.seed);
    let feats = |c: &[AnnotatedEntry]| -> Vec<Vec<FeatureVector>> {
        c.iter().map(|e| featurizer.extract_all(&e.token_texts())).collect()
    };
    let (train_feats, dev_feats) = (feats(train), feats(dev));

    let objective = match strategy {
        Strategy::M3 => Objective::Hxe(
            schema.build_label_tree(format),
            HxeConfig::with_alpha(T::from_f64_lossy(cfg.hxe_alpha)),
        ),
        _ => Objective::Ce,
    };
    let mut heads = Vec::new();
    let mut history = TrainHistory::default();
    for (k, &mode) in strategy.head_modes().iter().enumerate() {
        let vocab = head_vocabulary(strategy, mode, format, schema);
        let tp = prepare(train, &train_feats, strategy, mode, format, schema, &vocab)?;
        let dp = prepare(dev, &dev_feats, strategy, mode, format, schema, &vocab)?;
        let mut head = Head::zeros(mode, vocab, featurizer.rows());
        init_bias(&mut head, &tp, featurizer.bias_id());
        let (curve, step, f1) = train_head(&mut head, &tp, &dp, &objective, format, cfg, k as u64)?;
        history.heads.push(curve);
        history.best_step.push(step);
        history.best_dev_f1.push(f1);
        heads.push(head);
    }
    Ok((
        Model {
            strategy,
            format,
            schema_fingerprint: schema.fingerprint(),
            featurizer,
            heads,
        },
        history,
    ))
}
