//! Random entries and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use nested_tagger::schema::{LabelTree, Level};
use nested_tagger::tagcodec::{encode_entities, Mode};
use nested_tagger::{AnnotatedEntry, Entity, Format, LabelSchema};
use rand::seq::SliceRandom;
use rand::Rng;

pub const WORDS: &[&str] = &[
    "Dufour", "Gabriel", "libraire", "r", "de", "Vaugirard", "7", "bis", "marchand", "vins", "Paris",
    "quai", "Voltaire", "23", "fab", "papiers", "peints", "Légion", "honn", ",", ".", "et", "Cie",
];

pub fn random_text<R: Rng>(rng: &mut R, n: usize) -> String {
    (0..n)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

fn random_spans<R: Rng>(rng: &mut R, lo: usize, hi: usize, p: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = lo;
    while i < hi {
        if rng.gen_bool(p) {
            let len = rng.gen_range(1..=(hi - i).min(4));
            out.push((i, i + len));
            i += len;
        } else {
            i += 1;
        }
    }
    out
}

/// Schema-valid entry with 1..=`max_tokens` tokens.
pub fn random_entry<R: Rng>(rng: &mut R, schema: &LabelSchema, id: &str, max_tokens: usize) -> AnnotatedEntry {
    let n = rng.gen_range(1..=max_tokens);
    let text = random_text(rng, n);
    let outer_types: Vec<&str> = schema.types_at(Level::One).map(|t| t.name.as_str()).collect();
    let mut entities = Vec::new();
    for (s, e) in random_spans(rng, 0, n, 0.5) {
        let t = *outer_types.choose(rng).unwrap();
        let parent = entities.len();
        entities.push(Entity::outer(t, s, e));
        let children: Vec<&String> = schema.containment().get(t).map(|c| c.iter().collect()).unwrap_or_default();
        if children.is_empty() {
            continue;
        }
        for (cs, ce) in random_spans(rng, s, e, 0.5) {
            entities.push(Entity::inner(children.choose(rng).unwrap(), cs, ce, parent));
        }
    }
    AnnotatedEntry::new(id, &text, entities)
}

/// A prediction derived from `gold`: entities dropped, retyped or shrunk.
/// The result is structurally valid but may break the schema.
pub fn perturb<R: Rng>(rng: &mut R, gold: &AnnotatedEntry, schema: &LabelSchema) -> AnnotatedEntry {
    let outer: Vec<&str> = schema.types_at(Level::One).map(|t| t.name.as_str()).collect();
    let inner: Vec<&str> = schema.types_at(Level::Two).map(|t| t.name.as_str()).collect();
    let mut kept: Vec<Option<usize>> = vec![None; gold.entities.len()];
    let mut out: Vec<Entity> = Vec::new();
    for (i, e) in gold.entities.iter().enumerate() {
        if rng.gen_bool(0.25) {
            continue;
        }
        let mut x = e.clone();
        if rng.gen_bool(0.15) {
            let pool = if e.level == Level::One { &outer } else { &inner };
            x.etype = pool.choose(rng).unwrap().to_string();
        }
        if x.len() > 1 && rng.gen_bool(0.15) {
            if rng.gen_bool(0.5) {
                x.start += 1;
            } else {
                x.end -= 1;
            }
        }
        if let Some(p) = e.parent {
            x.parent = kept[p];
            if let Some(np) = x.parent {
                let pe: &Entity = &out[np];
                if x.start < pe.start || x.end > pe.end {
                    continue;
                }
            } else {
                // the old parent span is now free of level-1 entities
                let covered = out
                    .iter()
                    .any(|o| o.level == Level::One && o.start < x.end && x.start < o.end);
                if covered {
                    continue;
                }
            }
        }
        kept[i] = Some(out.len());
        out.push(x);
    }
    AnnotatedEntry::new(&gold.source_id, &gold.text, out)
}

/// Unit-cost edit distance over chars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut cur = vec![i; b.len() + 1];
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

fn parent_type(entry: &AnnotatedEntry, e: &Entity) -> String {
    e.parent.map_or_else(|| "O".to_string(), |p| entry.entities[p].etype.clone())
}

/// Flat spans of the bundled schema. Each token takes the type of its
/// innermost entity and starts a span when that entity starts there; under
/// IO only a change of type splits a span.
fn flat_pieces(entry: &AnnotatedEntry, format: Format) -> Vec<String> {
    let n = entry.len();
    let mut token: Vec<Option<(String, bool)>> = vec![None; n];
    for level in [Level::One, Level::Two] {
        for e in entry.entities.iter().filter(|e| e.level == level) {
            for k in e.start..e.end {
                token[k] = Some((e.etype.clone(), k == e.start));
            }
        }
    }
    let mut pieces: Vec<(String, usize, usize)> = Vec::new();
    for k in 0..n {
        let Some((t, begins)) = token[k].clone() else {
            continue;
        };
        let extends = pieces.last().is_some_and(|(pt, _, pe)| *pt == t && *pe == k)
            && !(format == Format::Iob2 && begins);
        if extends {
            pieces.last_mut().unwrap().2 = k + 1;
        } else {
            pieces.push((t, k, k + 1));
        }
    }
    pieces.into_iter().map(|(t, s, e)| format!("{t}@{s}-{e}")).collect()
}

/// Scored items of one entry for a scope name.
pub fn oracle_items(entry: &AnnotatedEntry, scope: &str, format: Format) -> Vec<String> {
    let span = |e: &Entity| format!("@{}-{}", e.start, e.end);
    let two = entry.entities.iter().filter(|e| e.level == Level::Two);
    match scope {
        "All" => entry.entities.iter().map(|e| format!("{:?}:{}{}", e.level, e.etype, span(e))).collect(),
        "L1" => entry
            .entities
            .iter()
            .filter(|e| e.level == Level::One)
            .map(|e| format!("{}{}", e.etype, span(e)))
            .collect(),
        "L2" => two.map(|e| format!("{}{}", e.etype, span(e))).collect(),
        "L1+L2" => two.map(|e| format!("{}+{}{}", parent_type(entry, e), e.etype, span(e))).collect(),
        "P-L1+P-L2" => {
            let joint = encode_entities(&entry.entities, entry.len(), format, Mode::Joint).tags;
            two.map(|e| format!("{}{}", joint[e.start], span(e))).collect()
        }
        "Flat" => flat_pieces(entry, format),
        _ => panic!("unknown scope {scope}"),
    }
}

/// (tp, fp, fn) by exhaustive pairing of equal items.
pub fn oracle_counts(gold: &[String], pred: &[String]) -> (u64, u64, u64) {
    let mut used = vec![false; gold.len()];
    let mut tp = 0;
    for p in pred {
        if let Some(k) = (0..gold.len()).find(|&k| !used[k] && gold[k] == *p) {
            used[k] = true;
            tp += 1;
        }
    }
    (tp, pred.len() as u64 - tp, gold.len() as u64 - tp)
}

pub fn ce_oracle(logits: &[f64], gold: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|x| (x - m).exp()).sum();
    m + z.ln() - logits[gold]
}

pub fn softmax_oracle(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Hierarchical loss from first principles: node masses are summed over the
/// leaves whose ancestor chain contains the node.
pub fn hxe_oracle(probs: &[f64], gold: usize, tree: &LabelTree, alpha: f64) -> f64 {
    let mut mass: BTreeMap<usize, f64> = BTreeMap::new();
    for (leaf, p) in probs.iter().enumerate() {
        for a in tree.ancestors(tree.leaf_node(leaf).unwrap()) {
            *mass.entry(a.0).or_default() += p;
        }
    }
    let path = tree.path_to_leaf(gold).unwrap();
    path.windows(2)
        .map(|w| {
            let depth = tree.node(w[1]).unwrap().depth as f64;
            let r = (mass[&w[1].0] / mass[&w[0].0]).max(1e-12);
            -(-alpha * depth).exp() * r.ln()
        })
        .sum()
}

/// A flat tree and the two bundled-schema trees.
pub fn tree_shapes() -> Vec<(&'static str, LabelTree)> {
    let schema = LabelSchema::paris_directories();
    vec![
        ("flat", LabelTree::flat(&["a", "b", "c", "d", "e"])),
        ("io", schema.build_label_tree(Format::Io)),
        ("iob2", schema.build_label_tree(Format::Iob2)),
    ]
}
