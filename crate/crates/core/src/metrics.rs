//! Exact-match span evaluation.
//!
//! Every scope turns an entry into a multiset of `(label, start, end)` items;
//! a prediction item is a true positive when the same item exists in gold.
//! There is no partial credit for overlapping spans.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{LabelSchema, Level, OUTSIDE};
use crate::tagcodec::{self, AnnotatedEntry, Entity, Format, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scope {
    /// Entities of both levels.
    All,
    L1,
    L2,
    /// Level-2 entities labelled with their level-1 type.
    L1L2,
    /// As `L1L2`, also matching the positional prefixes of the composed tag.
    PL1PL2,
    /// Entities after nested-to-flat mapping.
    Flat,
}

impl Scope {
    pub const ALL: [Scope; 6] = [
        Scope::All,
        Scope::L1,
        Scope::L2,
        Scope::L1L2,
        Scope::PL1PL2,
        Scope::Flat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scope::All => "All",
            Scope::L1 => "L1",
            Scope::L2 => "L2",
            Scope::L1L2 => "L1+L2",
            Scope::PL1PL2 => "P-L1+P-L2",
            Scope::Flat => "Flat",
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scope::ALL
            .iter()
            .copied()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown scope `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Prf {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }

    fn add(self, other: Prf) -> Prf {
        Prf::from_counts(self.tp + other.tp, self.fp + other.fp, self.fn_ + other.fn_)
    }
}

pub type Item = (String, usize, usize);

fn outer_type(entry: &AnnotatedEntry, e: &Entity) -> String {
    e.parent
        .and_then(|p| entry.entities.get(p))
        .map_or_else(|| OUTSIDE.to_string(), |p| p.etype.clone())
}

/// First-token composed tag of a level-2 entity, e.g. `B-SPAT+B-LOC`.
fn prefixed_composite(entry: &AnnotatedEntry, e: &Entity, format: Format) -> String {
    let parent = e.parent.and_then(|p| entry.entities.get(p));
    let outer = match (parent, format) {
        (None, _) => OUTSIDE.to_string(),
        (Some(p), Format::Iob2) if p.start == e.start => format!("B-{}", p.etype),
        (Some(p), _) => format!("I-{}", p.etype),
    };
    let inner = match format {
        Format::Iob2 => format!("B-{}", e.etype),
        Format::Io => format!("I-{}", e.etype),
    };
    format!("{outer}+{inner}")
}

/// Scored items of one entry.
pub fn scope_items(
    entry: &AnnotatedEntry,
    scope: Scope,
    format: Format,
    schema: &LabelSchema,
) -> Vec<Item> {
    let at = |level: Level| entry.entities.iter().filter(move |e| e.level == level);
    match scope {
        Scope::All => entry
            .entities
            .iter()
            .map(|e| (format!("{}:{}", e.level, e.etype), e.start, e.end))
            .collect(),
        Scope::L1 => at(Level::One)
            .map(|e| (e.etype.clone(), e.start, e.end))
            .collect(),
        Scope::L2 => at(Level::Two)
            .map(|e| (e.etype.clone(), e.start, e.end))
            .collect(),
        Scope::L1L2 => at(Level::Two)
            .map(|e| (format!("{}+{}", outer_type(entry, e), e.etype), e.start, e.end))
            .collect(),
        Scope::PL1PL2 => at(Level::Two)
            .map(|e| (prefixed_composite(entry, e, format), e.start, e.end))
            .collect(),
        Scope::Flat => {
            let seq = tagcodec::flat_tags(&entry.entities, entry.len(), format, schema);
            flat_items(&seq.tags)
        }
    }
}

/// Items of a flat tag sequence (the flat baseline's native output).
pub fn flat_items(tags: &[String]) -> Vec<Item> {
    let seq = tagcodec::TagSequence {
        format: Format::Iob2,
        mode: Mode::L1,
        tags: tags.to_vec(),
    };
    tagcodec::decode(&seq)
        .unwrap_or_default()
        .into_iter()
        .map(|e| (e.etype, e.start, e.end))
        .collect()
}

/// tp/fp/fn between two item multisets.
pub fn match_items(gold: &[Item], pred: &[Item]) -> Prf {
    let mut counts: HashMap<&Item, i64> = HashMap::new();
    for g in gold {
        *counts.entry(g).or_default() += 1;
    }
    let mut tp = 0u64;
    for p in pred {
        if let Some(c) = counts.get_mut(p) {
            if *c > 0 {
                *c -= 1;
                tp += 1;
            }
        }
    }
    Prf::from_counts(tp, pred.len() as u64 - tp, gold.len() as u64 - tp)
}

/// Pairs gold and predicted entries by source id.
pub fn align_corpora<'a>(
    gold: &'a [AnnotatedEntry],
    pred: &'a [AnnotatedEntry],
) -> Result<Vec<(&'a AnnotatedEntry, &'a AnnotatedEntry)>> {
    if gold.len() != pred.len() {
        return Err(Error::Misaligned(format!(
            "{} gold entries, {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let by_id: HashMap<&str, &AnnotatedEntry> =
        pred.iter().map(|p| (p.source_id.as_str(), p)).collect();
    if by_id.len() != pred.len() {
        return Err(Error::Misaligned("duplicate predicted source ids".into()));
    }
    gold.iter()
        .map(|g| {
            let p = by_id
                .get(g.source_id.as_str())
                .ok_or_else(|| Error::Misaligned(format!("no prediction for `{}`", g.source_id)))?;
            if p.len() != g.len() {
                return Err(Error::Misaligned(format!(
                    "`{}`: {} gold tokens, {} predicted",
                    g.source_id,
                    g.len(),
                    p.len()
                )));
            }
            Ok((g, *p))
        })
        .collect()
}

pub fn score_scope(
    gold: &[AnnotatedEntry],
    pred: &[AnnotatedEntry],
    scope: Scope,
    format: Format,
    schema: &LabelSchema,
) -> Result<Prf> {
    let pairs = align_corpora(gold, pred)?;
    Ok(pairs.iter().fold(Prf::from_counts(0, 0, 0), |acc, (g, p)| {
        acc.add(match_items(
            &scope_items(g, scope, format, schema),
            &scope_items(p, scope, format, schema),
        ))
    }))
}

/// Token-level confusion counts over prefix-stripped joint labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// `counts[gold][pred]`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    fn build(pairs: &[(&AnnotatedEntry, &AnnotatedEntry)], schema: &LabelSchema) -> Self {
        let token_labels = |e: &AnnotatedEntry| -> Vec<String> {
            let seq = tagcodec::encode_entities(&e.entities, e.len(), Format::Io, Mode::Joint);
            seq.tags
                .iter()
                .map(|t| {
                    let (o, i) = tagcodec::parse_joint_tag(t).expect("encoder output parses");
                    tagcodec::joint_label_of(&o, &i).to_string()
                })
                .collect()
        };
        let mut labels: Vec<String> = schema.joint_label_set().iter().map(|j| j.to_string()).collect();
        let mut extra = BTreeSet::new();
        let mut observed = Vec::new();
        for (g, p) in pairs {
            let gl = token_labels(g);
            let pl = token_labels(p);
            for l in gl.iter().chain(&pl) {
                if !labels.contains(l) {
                    extra.insert(l.clone());
                }
            }
            observed.push((gl, pl));
        }
        labels.extend(extra);
        let index: HashMap<&str, usize> =
            labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let mut counts = vec![vec![0u64; labels.len()]; labels.len()];
        for (gl, pl) in &observed {
            for (a, b) in gl.iter().zip(pl) {
                counts[index[a.as_str()]][index[b.as_str()]] += 1;
            }
        }
        ConfusionMatrix { labels, counts }
    }

    pub fn row_total(&self, row: usize) -> u64 {
        self.counts[row].iter().sum()
    }

    /// Row-normalized fractions; empty rows stay zero.
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let total: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                    .collect()
            })
            .collect()
    }

    pub fn get(&self, gold: &str, pred: &str) -> Option<u64> {
        let g = self.labels.iter().position(|l| l == gold)?;
        let p = self.labels.iter().position(|l| l == pred)?;
        Some(self.counts[g][p])
    }

    pub fn to_csv(&self, normalized: bool) -> String {
        let mut out = String::from("gold\\pred");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        let norm = self.normalized();
        for (i, l) in self.labels.iter().enumerate() {
            out.push_str(l);
            for j in 0..self.labels.len() {
                if normalized {
                    let _ = write!(out, ",{:.6}", norm[i][j]);
                } else {
                    let _ = write!(out, ",{}", self.counts[i][j]);
                }
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub source_id: String,
    pub outer: String,
    pub inner: String,
    pub start: usize,
    pub end: usize,
}

/// Level-2 entities whose (level-1 type, own type) pair the schema forbids,
/// including level-2 entities outside any level-1 entity.
pub fn hierarchy_violations(pred: &[AnnotatedEntry], schema: &LabelSchema) -> Vec<Violation> {
    let mut out = Vec::new();
    for entry in pred {
        for e in entry.entities.iter().filter(|e| e.level == Level::Two) {
            let outer = outer_type(entry, e);
            if !schema.contains(&outer, &e.etype) {
                out.push(Violation {
                    source_id: entry.source_id.clone(),
                    outer,
                    inner: e.etype.clone(),
                    start: e.start,
                    end: e.end,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: Format,
    pub scopes: BTreeMap<Scope, Prf>,
    /// Per entity type over both levels.
    pub per_type: BTreeMap<String, Prf>,
    pub confusion: ConfusionMatrix,
    pub violations: usize,
}

pub fn full_report(
    gold: &[AnnotatedEntry],
    pred: &[AnnotatedEntry],
    schema: &LabelSchema,
    format: Format,
) -> Result<EvalReport> {
    let pairs = align_corpora(gold, pred)?;
    let mut scopes = BTreeMap::new();
    for scope in Scope::ALL {
        let prf = pairs.iter().fold(Prf::from_counts(0, 0, 0), |acc, (g, p)| {
            acc.add(match_items(
                &scope_items(g, scope, format, schema),
                &scope_items(p, scope, format, schema),
            ))
        });
        scopes.insert(scope, prf);
    }

    let mut per_type: BTreeMap<String, Prf> = BTreeMap::new();
    for (g, p) in &pairs {
        let items = |e: &AnnotatedEntry| -> BTreeMap<String, Vec<Item>> {
            let mut by_type: BTreeMap<String, Vec<Item>> = BTreeMap::new();
            for x in &e.entities {
                by_type
                    .entry(x.etype.clone())
                    .or_default()
                    .push((x.level.to_string(), x.start, x.end));
            }
            by_type
        };
        let gi = items(g);
        let pi = items(p);
        let types: BTreeSet<&String> = gi.keys().chain(pi.keys()).collect();
        for t in types {
            let empty = Vec::new();
            let prf = match_items(gi.get(t).unwrap_or(&empty), pi.get(t).unwrap_or(&empty));
            let slot = per_type.entry(t.clone()).or_insert_with(|| Prf::from_counts(0, 0, 0));
            *slot = slot.add(prf);
        }
    }

    let pred_entries: Vec<AnnotatedEntry> = pairs.iter().map(|(_, p)| (*p).clone()).collect();
    Ok(EvalReport {
        format,
        scopes,
        per_type,
        confusion: ConfusionMatrix::build(&pairs, schema),
        violations: hierarchy_violations(&pred_entries, schema).len(),
    })
}

impl EvalReport {
    pub fn f1(&self, scope: Scope) -> f64 {
        self.scopes.get(&scope).map_or(0.0, |p| p.f1)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,name,precision,recall,f1,tp,fp,fn\n");
        let rows = self
            .scopes
            .iter()
            .map(|(s, p)| ("scope", s.name().to_string(), p))
            .chain(self.per_type.iter().map(|(t, p)| ("type", t.clone(), p)));
        for (kind, name, p) in rows {
            let _ = writeln!(
                out,
                "{kind},{name},{:.6},{:.6},{:.6},{},{},{}",
                p.precision, p.recall, p.f1, p.tp, p.fp, p.fn_
            );
        }
        let _ = writeln!(out, "violations,count,,,,{},,", self.violations);
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>9} {:>9} {:>9}", "scope", "P", "R", "F1");
        for (s, p) in &self.scopes {
            let _ = writeln!(
                out,
                "{:<12} {:>9.2} {:>9.2} {:>9.2}",
                s.name(),
                100.0 * p.precision,
                100.0 * p.recall,
                100.0 * p.f1
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<12} {:>9} {:>9} {:>9}", "type", "P", "R", "F1");
        for (t, p) in &self.per_type {
            let _ = writeln!(
                out,
                "{:<12} {:>9.2} {:>9.2} {:>9.2}",
                t,
                100.0 * p.precision,
                100.0 * p.recall,
                100.0 * p.f1
            );
        }
        let _ = writeln!(out, "\nhierarchy violations: {}", self.violations);
        out
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}
