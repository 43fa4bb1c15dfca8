use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::LabelSchema;
use crate::schema::Level;
use crate::tagcodec::{
    canonicalize, decode_levels, encode_entities, parse_joint_tag, tokenize, AnnotatedEntry, Entity,
    Format, Mode, Tag, Token,
};

pub const TSV_HEADER: &str = "token\tL1\tL2";

/// Tag columns of a TSV file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsvLayout {
    /// `token<TAB>L1<TAB>L2`, the default.
    Levels,
    /// `token<TAB>JOINT`.
    Joint,
    /// `token<TAB>L1`, level-1 entities only.
    L1,
}

impl TsvLayout {
    pub fn header(self) -> &'static str {
        match self {
            TsvLayout::Levels => TSV_HEADER,
            TsvLayout::Joint => "token\tJOINT",
            TsvLayout::L1 => "token\tL1",
        }
    }

    fn from_header(line: &str) -> Option<Self> {
        [TsvLayout::Levels, TsvLayout::Joint, TsvLayout::L1]
            .into_iter()
            .find(|l| l.header() == line)
    }

    fn columns(self) -> usize {
        match self {
            TsvLayout::Levels => 3,
            _ => 2,
        }
    }
}

/// Two-column tagged text: one token per row, entries separated by a blank
/// line, `# id = ...` and `# text = ...` comments before each entry.
pub fn write_tsv(entries: &[AnnotatedEntry], format: Format) -> String {
    write_tsv_layout(entries, format, TsvLayout::Levels)
}

pub fn write_tsv_layout(entries: &[AnnotatedEntry], format: Format, layout: TsvLayout) -> String {
    let mut out = String::new();
    out.push_str(layout.header());
    out.push('\n');
    for e in entries {
        let columns: Vec<Vec<String>> = match layout {
            TsvLayout::Levels => vec![
                encode_entities(&e.entities, e.len(), format, Mode::L1).tags,
                encode_entities(&e.entities, e.len(), format, Mode::L2).tags,
            ],
            TsvLayout::Joint => vec![encode_entities(&e.entities, e.len(), format, Mode::Joint).tags],
            TsvLayout::L1 => vec![encode_entities(&e.entities, e.len(), format, Mode::L1).tags],
        };
        let _ = writeln!(out, "# id = {}", e.source_id);
        let _ = writeln!(out, "# text = {}", e.text);
        for (k, t) in e.tokens.iter().enumerate() {
            out.push_str(&t.text);
            for c in &columns {
                out.push('\t');
                out.push_str(&c[k]);
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

struct Block {
    line: usize,
    id: Option<String>,
    text: Option<String>,
    rows: Vec<(String, Tag, Tag)>,
}

impl Block {
    fn new(line: usize) -> Self {
        Block { line, id: None, text: None, rows: Vec::new() }
    }

    fn is_empty(&self) -> bool {
        self.id.is_none() && self.text.is_none() && self.rows.is_empty()
    }

    fn finish(self, index: usize, schema: &LabelSchema) -> Result<AnnotatedEntry> {
        let loc = format!("entry starting at line {}", self.line);
        let id = self.id.unwrap_or_else(|| format!("entry-{index}"));
        let words: Vec<&str> = self.rows.iter().map(|r| r.0.as_str()).collect();
        let text = self.text.unwrap_or_else(|| words.join(" "));
        let tokens = tokenize(&text);
        if tokens.len() != words.len() || tokens.iter().zip(&words).any(|(t, w)| t.text != *w) {
            return Err(Error::parse(loc, "token column does not match the tokenized text"));
        }
        let outer: Vec<Tag> = self.rows.iter().map(|r| r.1.clone()).collect();
        let inner: Vec<Tag> = self.rows.iter().map(|r| r.2.clone()).collect();
        let entities = decode_levels(&outer, &inner);
        if entities.iter().any(|e| e.parent.is_none() && e.level == Level::Two) {
            return Err(Error::entry(&id, "level-2 entity outside any level-1 entity"));
        }
        let entry = AnnotatedEntry { source_id: id, text, tokens, entities };
        entry.validate(schema)?;
        Ok(entry)
    }
}

pub fn read_tsv(input: &str, schema: &LabelSchema) -> Result<Vec<AnnotatedEntry>> {
    read_tsv_checked(input, schema, None)
}

/// Reads a TSV corpus. With `format = Some(Format::Io)`, `B-` tags are
/// rejected. The layout is taken from the header line (default: levels).
pub fn read_tsv_checked(input: &str, schema: &LabelSchema, format: Option<Format>) -> Result<Vec<AnnotatedEntry>> {
    let mut entries = Vec::new();
    let mut layout = TsvLayout::Levels;
    let mut block = Block::new(1);
    for (i, raw) in input.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if i == 0 {
            if let Some(l) = TsvLayout::from_header(line) {
                layout = l;
                block.line = 2;
                continue;
            }
        }
        if line.trim().is_empty() {
            if !block.is_empty() {
                let b = std::mem::replace(&mut block, Block::new(lineno + 1));
                entries.push(b.finish(entries.len(), schema)?);
            } else {
                block.line = lineno + 1;
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("# ") {
            if let Some(v) = rest.strip_prefix("id = ") {
                block.id = Some(v.to_string());
            } else if let Some(v) = rest.strip_prefix("text = ") {
                block.text = Some(v.to_string());
            }
            continue;
        }
        let at = || format!("line {lineno}");
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != layout.columns() {
            return Err(Error::parse(
                at(),
                format!("expected {} tab-separated columns, found {}", layout.columns(), cols.len()),
            ));
        }
        if format == Some(Format::Io) && cols[1..].iter().any(|c| c.starts_with("B-") || c.contains("+B-")) {
            return Err(Error::parse(at(), "B- tag in IO input"));
        }
        let tag = |s: &str| -> Result<Tag> { s.parse().map_err(|_| Error::parse(at(), format!("bad tag `{s}`"))) };
        let (outer, inner) = match layout {
            TsvLayout::Levels => (tag(cols[1])?, tag(cols[2])?),
            TsvLayout::Joint => {
                parse_joint_tag(cols[1]).map_err(|_| Error::parse(at(), format!("bad joint tag `{}`", cols[1])))?
            }
            TsvLayout::L1 => (tag(cols[1])?, Tag::Outside),
        };
        block.rows.push((cols[0].to_string(), outer, inner));
    }
    if !block.is_empty() {
        entries.push(block.finish(entries.len(), schema)?);
    }
    Ok(entries)
}

#[derive(Serialize, Deserialize)]
struct JsonEntry {
    source_id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<(usize, usize)>>,
    #[serde(default)]
    entities: Vec<Entity>,
}

pub fn write_jsonl(entries: &[AnnotatedEntry]) -> Result<String> {
    let mut out = String::new();
    for e in entries {
        let j = JsonEntry {
            source_id: e.source_id.clone(),
            text: e.text.clone(),
            tokens: Some(e.tokens.iter().map(|t| (t.start, t.end)).collect()),
            entities: e.entities.clone(),
        };
        out.push_str(&serde_json::to_string(&j)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_jsonl(input: &str, schema: &LabelSchema) -> Result<Vec<AnnotatedEntry>> {
    let mut entries = Vec::new();
    for (i, line) in input.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let loc = format!("line {}", i + 1);
        let j: JsonEntry = serde_json::from_str(line).map_err(|e| Error::parse(&loc, e.to_string()))?;
        let chars: Vec<char> = j.text.chars().collect();
        let tokens = match j.tokens {
            None => tokenize(&j.text),
            Some(spans) => {
                let mut toks = Vec::with_capacity(spans.len());
                for (start, end) in spans {
                    if start >= end || end > chars.len() {
                        return Err(Error::parse(&loc, format!("token span [{start}, {end}) out of range")));
                    }
                    toks.push(Token { text: chars[start..end].iter().collect(), start, end });
                }
                toks
            }
        };
        let entry = AnnotatedEntry {
            source_id: j.source_id,
            text: j.text,
            tokens,
            entities: canonicalize(&j.entities),
        };
        entry.validate(schema)?;
        entries.push(entry);
    }
    Ok(entries)
}

#[derive(Serialize, Deserialize)]
struct NoisyLine {
    source_id: String,
    text: String,
}

/// Reads `{"source_id", "text"}` lines; later duplicates win.
pub fn read_noisy_texts(input: &str) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for (i, line) in input.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let n: NoisyLine =
            serde_json::from_str(line).map_err(|e| Error::parse(format!("line {}", i + 1), e.to_string()))?;
        out.insert(n.source_id, n.text);
    }
    Ok(out)
}

pub fn write_noisy_texts(texts: &[(String, String)]) -> Result<String> {
    let mut out = String::new();
    for (id, text) in texts {
        out.push_str(&serde_json::to_string(&NoisyLine { source_id: id.clone(), text: text.clone() })?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagcodec::Entity;

    fn dufour() -> AnnotatedEntry {
        AnnotatedEntry::new(
            "d1",
            "Dufour (Gabriel), libraire, r. de Vaugirard, 7",
            vec![
                Entity::outer("PER", 0, 4),
                Entity::outer("ACT", 5, 6),
                Entity::outer("SPAT", 7, 13),
                Entity::inner("LOC", 7, 11, 2),
                Entity::inner("CARDINAL", 12, 13, 2),
            ],
        )
    }

    #[test]
    fn tsv_round_trip() {
        let s = LabelSchema::paris_directories();
        let entries = vec![dufour(), AnnotatedEntry::new("d2", "rien ici .", vec![])];
        for f in Format::ALL {
            let text = write_tsv(&entries, f);
            let back = read_tsv(&text, &s).unwrap();
            assert_eq!(back, entries);
            assert_eq!(write_tsv(&back, f), text);
        }
        let text = write_tsv(&entries, Format::Iob2);
        assert!(text.contains("Vaugirard\tI-SPAT\tI-LOC\n"));
        assert!(text.contains("7\tI-SPAT\tB-CARDINAL\n"));
    }

    #[test]
    fn other_layouts_round_trip() {
        let s = LabelSchema::paris_directories();
        let entries = vec![dufour()];
        for f in Format::ALL {
            let text = write_tsv_layout(&entries, f, TsvLayout::Joint);
            assert!(text.starts_with("token\tJOINT\n"));
            assert_eq!(read_tsv(&text, &s).unwrap(), entries);
        }
        let text = write_tsv_layout(&entries, Format::Iob2, TsvLayout::L1);
        let back = read_tsv(&text, &s).unwrap();
        assert_eq!(back[0].entities.len(), 3);
    }

    #[test]
    fn io_input_rejects_begin_tags() {
        let s = LabelSchema::paris_directories();
        let text = write_tsv(&[dufour()], Format::Iob2);
        assert!(read_tsv_checked(&text, &s, Some(Format::Io)).is_err());
        assert!(read_tsv_checked(&text, &s, Some(Format::Iob2)).is_ok());
    }

    #[test]
    fn empty_corpus_is_just_a_header() {
        let s = LabelSchema::paris_directories();
        let text = write_tsv(&[], Format::Iob2);
        assert_eq!(text, "token\tL1\tL2\n");
        assert!(read_tsv(&text, &s).unwrap().is_empty());
    }

    #[test]
    fn jsonl_round_trip() {
        let s = LabelSchema::paris_directories();
        let entries = vec![dufour()];
        let text = write_jsonl(&entries).unwrap();
        let back = read_jsonl(&text, &s).unwrap();
        assert_eq!(back, entries);
        assert_eq!(write_jsonl(&back).unwrap(), text);
    }

    #[test]
    fn tsv_errors_are_located() {
        let s = LabelSchema::paris_directories();
        let err = read_tsv("a\tB-PER\n", &s).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
        let err = read_tsv("a\tB-XX\tO\n", &s).unwrap_err();
        assert!(matches!(err, Error::InvalidEntry { .. }), "{err}");
        assert!(read_tsv("a\tO\tB-LOC\n", &s).is_err());
        assert!(read_tsv("# text = a b\na\tO\tO\n", &s).is_err());
    }

    #[test]
    fn jsonl_rejects_bad_spans() {
        let s = LabelSchema::paris_directories();
        assert!(read_jsonl(r#"{"source_id":"x","text":"ab","tokens":[[0,3]]}"#, &s).is_err());
        let ok = read_jsonl(r#"{"source_id":"x","text":"ab cd"}"#, &s).unwrap();
        assert_eq!(ok[0].len(), 2);
    }

    #[test]
    fn noisy_text_lines() {
        let text = write_noisy_texts(&[("a".into(), "x y".into())]).unwrap();
        let m = read_noisy_texts(&text).unwrap();
        assert_eq!(m["a"], "x y");
    }
}
