//! Character alignment between clean and OCR text, and projection of gold
//! entity spans onto the noisy side.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::schema::{LabelSchema, Level};
use crate::tagcodec::{self, canonicalize, AnnotatedEntry, Entity, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EditOp {
    Match,
    Substitute,
    /// Gold character absent from the noisy text.
    Delete,
    /// Noisy character with no gold counterpart.
    Insert,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentMap {
    pub ops: Vec<EditOp>,
    /// Noisy index aligned with each gold character; `None` where deleted.
    pub gold_to_noisy: Vec<Option<usize>>,
}

impl AlignmentMap {
    pub fn cost(&self) -> usize {
        self.ops.iter().filter(|op| **op != EditOp::Match).count()
    }

    /// Rebuilds the noisy string from the gold string and the edit script.
    pub fn replay(&self, gold: &str, noisy: &str) -> String {
        let g: Vec<char> = gold.chars().collect();
        let n: Vec<char> = noisy.chars().collect();
        let (mut i, mut j) = (0, 0);
        let mut out = String::new();
        for op in &self.ops {
            match op {
                EditOp::Match => {
                    out.push(g[i]);
                    i += 1;
                    j += 1;
                }
                EditOp::Substitute => {
                    out.push(n[j]);
                    i += 1;
                    j += 1;
                }
                EditOp::Delete => i += 1,
                EditOp::Insert => {
                    out.push(n[j]);
                    j += 1;
                }
            }
        }
        out
    }
}

/// Global minimum-cost alignment (unit costs for substitution, insertion and
/// deletion). Among equal-cost scripts, the traceback prefers, from the end
/// of both strings, match > substitute > delete > insert.
pub fn align_chars(gold: &str, noisy: &str) -> AlignmentMap {
    let g: Vec<char> = gold.chars().collect();
    let n: Vec<char> = noisy.chars().collect();
    let (rows, cols) = (g.len() + 1, n.len() + 1);
    let mut dp = vec![0u32; rows * cols];
    for i in 0..rows {
        dp[i * cols] = i as u32;
    }
    for (j, cell) in dp.iter_mut().enumerate().take(cols) {
        *cell = j as u32;
    }
    for i in 1..rows {
        for j in 1..cols {
            let diag = dp[(i - 1) * cols + j - 1] + u32::from(g[i - 1] != n[j - 1]);
            let up = dp[(i - 1) * cols + j] + 1;
            let left = dp[i * cols + j - 1] + 1;
            dp[i * cols + j] = diag.min(up).min(left);
        }
    }

    let mut ops = Vec::with_capacity(rows.max(cols));
    let (mut i, mut j) = (g.len(), n.len());
    while i > 0 || j > 0 {
        let here = dp[i * cols + j];
        if i > 0 && j > 0 && g[i - 1] == n[j - 1] && dp[(i - 1) * cols + j - 1] == here {
            ops.push(EditOp::Match);
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && dp[(i - 1) * cols + j - 1] + 1 == here {
            ops.push(EditOp::Substitute);
            i -= 1;
            j -= 1;
        } else if i > 0 && dp[(i - 1) * cols + j] + 1 == here {
            ops.push(EditOp::Delete);
            i -= 1;
        } else {
            ops.push(EditOp::Insert);
            j -= 1;
        }
    }
    ops.reverse();

    let mut gold_to_noisy = Vec::with_capacity(g.len());
    let mut j = 0;
    for op in &ops {
        match op {
            EditOp::Match | EditOp::Substitute => {
                gold_to_noisy.push(Some(j));
                j += 1;
            }
            EditOp::Delete => gold_to_noisy.push(None),
            EditOp::Insert => j += 1,
        }
    }
    AlignmentMap { ops, gold_to_noisy }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub entities_total: usize,
    pub entities_projected: usize,
    pub entities_dropped: usize,
    pub entries_dropped: usize,
    /// Entries with no noisy text at all (also counted in `entries_dropped`).
    pub entries_missing: usize,
}

impl ProjectionReport {
    pub fn merge(self, o: ProjectionReport) -> ProjectionReport {
        ProjectionReport {
            entities_total: self.entities_total + o.entities_total,
            entities_projected: self.entities_projected + o.entities_projected,
            entities_dropped: self.entities_dropped + o.entities_dropped,
            entries_dropped: self.entries_dropped + o.entries_dropped,
            entries_missing: self.entries_missing + o.entries_missing,
        }
    }

    pub fn projected_fraction(&self) -> f64 {
        if self.entities_total == 0 {
            1.0
        } else {
            self.entities_projected as f64 / self.entities_total as f64
        }
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "entities: {} total, {} projected, {} dropped ({:.2}% kept)",
            self.entities_total,
            self.entities_projected,
            self.entities_dropped,
            100.0 * self.projected_fraction()
        );
        let _ = write!(
            s,
            "entries dropped: {} ({} without noisy text)",
            self.entries_dropped, self.entries_missing
        );
        s
    }
}

/// Character span `[start, end)` of the aligned noisy positions, or `None`
/// when every gold character in the range was deleted.
fn project_chars(map: &AlignmentMap, start: usize, end: usize) -> Option<(usize, usize)> {
    let mut lo = None;
    let mut hi = None;
    for p in map.gold_to_noisy[start..end].iter().flatten() {
        lo = Some(lo.map_or(*p, |l: usize| l.min(*p)));
        hi = Some(hi.map_or(*p, |h: usize| h.max(*p)));
    }
    Some((lo?, hi? + 1))
}

fn overlap(a: (usize, usize), b: (usize, usize)) -> usize {
    a.1.min(b.1).saturating_sub(a.0.max(b.0))
}

/// Assigns tokens to candidate spans by plurality of covered characters.
/// A token stays outside when uncovered characters outnumber every span;
/// ties favour spans over outside, then the earlier-starting span.
fn assign_tokens(tokens: &[Token], spans: &[(usize, usize)]) -> Vec<Option<usize>> {
    tokens
        .iter()
        .map(|t| {
            let tok = (t.start, t.end);
            let mut best: Option<(usize, usize)> = None;
            let mut covered = 0;
            for (k, &s) in spans.iter().enumerate() {
                let ov = overlap(tok, s);
                covered += ov;
                if ov == 0 {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bk, bov)) => ov > bov || (ov == bov && s.0 < spans[bk].0),
                };
                if better {
                    best = Some((k, ov));
                }
            }
            let outside = (t.end - t.start).saturating_sub(covered);
            match best {
                Some((k, ov)) if ov >= outside => Some(k),
                _ => None,
            }
        })
        .collect()
}

fn token_range(owner: &[Option<usize>], k: usize) -> Option<(usize, usize)> {
    let first = owner.iter().position(|o| *o == Some(k))?;
    let last = owner.iter().rposition(|o| *o == Some(k))?;
    Some((first, last + 1))
}

/// Projects one entry's annotations onto its noisy text.
///
/// Returns `None` for the entry when no entity survives.
pub fn project_entry(
    entry: &AnnotatedEntry,
    noisy_text: &str,
    _schema: &LabelSchema,
) -> (Option<AnnotatedEntry>, ProjectionReport) {
    let mut report = ProjectionReport {
        entities_total: entry.entities.len(),
        ..Default::default()
    };
    let map = align_chars(&entry.text, noisy_text);
    let tokens = tagcodec::tokenize(noisy_text);

    // character projection, with level-2 spans clamped into their parent
    let mut char_spans: Vec<Option<(usize, usize)>> = entry
        .entities
        .iter()
        .map(|e| {
            let (s, t) = entry.char_span(e);
            project_chars(&map, s, t)
        })
        .collect();
    for (i, e) in entry.entities.iter().enumerate() {
        if let Some(p) = e.parent {
            char_spans[i] = match (char_spans[i], char_spans[p]) {
                (Some(c), Some(pc)) => {
                    let s = c.0.max(pc.0);
                    let t = c.1.min(pc.1);
                    (s < t).then_some((s, t))
                }
                _ => None,
            };
        }
    }

    let mut token_spans: Vec<Option<(usize, usize)>> = vec![None; entry.entities.len()];
    for level in [Level::One, Level::Two] {
        let idx: Vec<usize> = (0..entry.entities.len())
            .filter(|&i| entry.entities[i].level == level && char_spans[i].is_some())
            .collect();
        let spans: Vec<(usize, usize)> = idx.iter().map(|&i| char_spans[i].unwrap()).collect();
        let owner = assign_tokens(&tokens, &spans);
        for (k, &i) in idx.iter().enumerate() {
            token_spans[i] = token_range(&owner, k);
        }
    }
    for (i, e) in entry.entities.iter().enumerate() {
        if let Some(p) = e.parent {
            token_spans[i] = match (token_spans[i], token_spans[p]) {
                (Some(c), Some(pc)) => {
                    let s = c.0.max(pc.0);
                    let t = c.1.min(pc.1);
                    (s < t).then_some((s, t))
                }
                _ => None,
            };
        }
    }

    let mut new_index = vec![None; entry.entities.len()];
    let mut projected = Vec::new();
    for (i, e) in entry.entities.iter().enumerate() {
        let Some((start, end)) = token_spans[i] else {
            continue;
        };
        let parent = match e.parent {
            Some(p) => match new_index[p] {
                Some(np) => Some(np),
                None => continue,
            },
            None => None,
        };
        new_index[i] = Some(projected.len());
        projected.push(Entity {
            etype: e.etype.clone(),
            level: e.level,
            start,
            end,
            parent,
        });
    }
    report.entities_projected = projected.len();
    report.entities_dropped = report.entities_total - report.entities_projected;

    if projected.is_empty() {
        report.entries_dropped = 1;
        return (None, report);
    }
    let out = AnnotatedEntry {
        source_id: entry.source_id.clone(),
        text: noisy_text.to_string(),
        tokens,
        entities: canonicalize(&projected),
    };
    (Some(out), report)
}

/// Projects a whole corpus. Entries without a noisy text are skipped and
/// counted; output order follows the gold corpus.
pub fn build_noisy_corpus(
    gold: &[AnnotatedEntry],
    noisy_texts: &HashMap<String, String>,
    schema: &LabelSchema,
) -> (Vec<AnnotatedEntry>, ProjectionReport) {
    let results: Vec<(Option<AnnotatedEntry>, ProjectionReport)> = gold
        .par_iter()
        .map(|entry| match noisy_texts.get(&entry.source_id) {
            Some(text) => project_entry(entry, text, schema),
            None => (
                None,
                ProjectionReport {
                    entities_total: entry.entities.len(),
                    entities_dropped: entry.entities.len(),
                    entries_dropped: 1,
                    entries_missing: 1,
                    ..Default::default()
                },
            ),
        })
        .collect();
    let mut report = ProjectionReport::default();
    let mut out = Vec::new();
    for (e, r) in results {
        report = report.merge(r);
        out.extend(e);
    }
    (out, report)
}
