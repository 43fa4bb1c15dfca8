//! Span annotations <-> per-token tags.
//!
//! Tags follow the `PREFIX-TYPE` syntax (`B-LOC`, `I-PER`, `O`); joint tags
//! concatenate the level-1 and level-2 tags with `+` (`B-SPAT+B-LOC`, `O+O`).
//! Decoding never fails on well-formed tag strings: an `I-X` with no open `X`
//! entity starts a new one, and in joint mode a level-2 entity is cut where
//! its level-1 entity ends.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{JointLabel, LabelSchema, Level, OUTSIDE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Format {
    #[serde(rename = "IO")]
    Io,
    #[serde(rename = "IOB2")]
    Iob2,
}

impl Format {
    pub const ALL: [Format; 2] = [Format::Io, Format::Iob2];

    pub fn name(self) -> &'static str {
        match self {
            Format::Io => "IO",
            Format::Iob2 => "IOB2",
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "IO" => Ok(Format::Io),
            "IOB2" | "BIO" => Ok(Format::Iob2),
            _ => Err(Error::Config(format!("unknown tag format `{s}`"))),
        }
    }
}

/// Which entities a tag sequence describes.
///
/// `L1` is also used for flat tag sequences (a single level of types).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    L1,
    L2,
    Joint,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::L1 => "L1",
            Mode::L2 => "L2",
            Mode::Joint => "JOINT",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "L1" | "FLAT" => Ok(Mode::L1),
            "L2" => Ok(Mode::L2),
            "JOINT" => Ok(Mode::Joint),
            _ => Err(Error::Config(format!("unknown tag mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Prefix {
    B,
    I,
}

/// One level's tag.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Tag {
    Outside,
    Inside { prefix: Prefix, class: String },
}

impl Tag {
    pub fn begin(class: &str) -> Self {
        Tag::Inside {
            prefix: Prefix::B,
            class: class.to_string(),
        }
    }

    pub fn inside(class: &str) -> Self {
        Tag::Inside {
            prefix: Prefix::I,
            class: class.to_string(),
        }
    }

    pub fn class(&self) -> Option<&str> {
        match self {
            Tag::Outside => None,
            Tag::Inside { class, .. } => Some(class),
        }
    }

    pub fn prefix(&self) -> Option<Prefix> {
        match self {
            Tag::Outside => None,
            Tag::Inside { prefix, .. } => Some(*prefix),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => f.write_str(OUTSIDE),
            Tag::Inside { prefix, class } => {
                let p = match prefix {
                    Prefix::B => 'B',
                    Prefix::I => 'I',
                };
                write!(f, "{p}-{class}")
            }
        }
    }
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == OUTSIDE {
            return Ok(Tag::Outside);
        }
        let (p, class) = s
            .split_once('-')
            .ok_or_else(|| Error::InvalidTag(s.to_string()))?;
        let prefix = match p {
            "B" => Prefix::B,
            "I" => Prefix::I,
            _ => return Err(Error::InvalidTag(s.to_string())),
        };
        if class.is_empty() || class.contains(['-', '+']) || class == OUTSIDE {
            return Err(Error::InvalidTag(s.to_string()));
        }
        Ok(Tag::Inside {
            prefix,
            class: class.to_string(),
        })
    }
}

/// Splits `P1-T1+P2-T2` into its two level tags.
pub fn parse_joint_tag(s: &str) -> Result<(Tag, Tag)> {
    let (a, b) = s
        .split_once('+')
        .ok_or_else(|| Error::InvalidTag(s.to_string()))?;
    Ok((a.parse()?, b.parse()?))
}

pub fn joint_tag(outer: &Tag, inner: &Tag) -> String {
    format!("{outer}+{inner}")
}

/// Strips positional prefixes from a joint tag.
pub fn joint_label_of(outer: &Tag, inner: &Tag) -> JointLabel {
    JointLabel::new(outer.class(), inner.class())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    /// Character (not byte) offsets into the entry text, `[start, end)`.
    pub start: usize,
    pub end: usize,
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Whitespace tokenization with every punctuation character as its own token.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut word: Option<(usize, String)> = None;
    let flush = |word: &mut Option<(usize, String)>, out: &mut Vec<Token>, end: usize| {
        if let Some((start, text)) = word.take() {
            out.push(Token { text, start, end });
        }
    };
    let mut n = 0;
    for (i, c) in text.chars().enumerate() {
        n = i + 1;
        if c.is_whitespace() {
            flush(&mut word, &mut out, i);
        } else if is_punct(c) {
            flush(&mut word, &mut out, i);
            out.push(Token {
                text: c.to_string(),
                start: i,
                end: i + 1,
            });
        } else {
            match &mut word {
                Some((_, w)) => w.push(c),
                None => word = Some((i, c.to_string())),
            }
        }
    }
    flush(&mut word, &mut out, n);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Entity {
    #[serde(rename = "type")]
    pub etype: String,
    pub level: Level,
    /// Token span `[start, end)`.
    pub start: usize,
    pub end: usize,
    /// Index of the containing level-1 entity in the entry's entity list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<usize>,
}

impl Entity {
    pub fn outer(etype: &str, start: usize, end: usize) -> Self {
        Entity {
            etype: etype.to_string(),
            level: Level::One,
            start,
            end,
            parent: None,
        }
    }

    pub fn inner(etype: &str, start: usize, end: usize, parent: usize) -> Self {
        Entity {
            etype: etype.to_string(),
            level: Level::Two,
            start,
            end,
            parent: Some(parent),
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Puts level-1 entities first, each level ordered by span, and remaps parent
/// indices to the new positions.
pub fn canonicalize(entities: &[Entity]) -> Vec<Entity> {
    let mut order: Vec<usize> = (0..entities.len()).collect();
    order.sort_by_key(|&i| {
        let e = &entities[i];
        (e.level, e.start, e.end, e.etype.clone())
    });
    let mut new_pos = vec![0; entities.len()];
    for (pos, &old) in order.iter().enumerate() {
        new_pos[old] = pos;
    }
    order
        .iter()
        .map(|&i| {
            let mut e = entities[i].clone();
            e.parent = e.parent.and_then(|p| new_pos.get(p).copied());
            e
        })
        .collect()
}

/// One corpus entry: text, tokens and two-level entity annotations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedEntry {
    pub source_id: String,
    pub text: String,
    pub tokens: Vec<Token>,
    pub entities: Vec<Entity>,
}

impl AnnotatedEntry {
    /// Tokenizes `text` and stores entities in canonical order.
    pub fn new(source_id: &str, text: &str, entities: Vec<Entity>) -> Self {
        AnnotatedEntry {
            source_id: source_id.to_string(),
            text: text.to_string(),
            tokens: tokenize(text),
            entities: canonicalize(&entities),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token_texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    /// Character span `[start, end)` covered by an entity.
    pub fn char_span(&self, e: &Entity) -> (usize, usize) {
        (self.tokens[e.start].start, self.tokens[e.end - 1].end)
    }

    pub fn with_canonical_entities(mut self) -> Self {
        self.entities = canonicalize(&self.entities);
        self
    }

    /// Structural checks that do not need a schema.
    pub fn validate_structure(&self) -> Result<()> {
        let id = &self.source_id;
        let n_chars = self.text.chars().count();
        let mut prev_end = 0;
        for (i, t) in self.tokens.iter().enumerate() {
            if t.start >= t.end || t.end > n_chars || t.start < prev_end {
                return Err(Error::entry(id, format!("token {i} has a bad character span")));
            }
            prev_end = t.end;
        }
        for (i, e) in self.entities.iter().enumerate() {
            if e.start >= e.end || e.end > self.tokens.len() {
                return Err(Error::entry(id, format!("entity {i} has a bad token span")));
            }
            match (e.level, e.parent) {
                (Level::One, Some(_)) => {
                    return Err(Error::entry(id, format!("level-1 entity {i} has a parent")))
                }
                (Level::Two, None) => {
                    return Err(Error::entry(id, format!("level-2 entity {i} has no parent")))
                }
                (Level::Two, Some(p)) => {
                    let parent = self
                        .entities
                        .get(p)
                        .ok_or_else(|| Error::entry(id, format!("entity {i}: parent {p} missing")))?;
                    if parent.level != Level::One {
                        return Err(Error::entry(id, format!("entity {i}: parent is not level 1")));
                    }
                    if e.start < parent.start || e.end > parent.end {
                        return Err(Error::entry(id, format!("entity {i} leaks out of its parent")));
                    }
                }
                (Level::One, None) => {}
            }
        }
        for level in [Level::One, Level::Two] {
            let mut spans: Vec<(usize, usize)> = self
                .entities
                .iter()
                .filter(|e| e.level == level)
                .map(|e| (e.start, e.end))
                .collect();
            spans.sort_unstable();
            if spans.windows(2).any(|w| w[1].0 < w[0].1) {
                return Err(Error::entry(id, format!("overlapping level-{level} entities")));
            }
        }
        Ok(())
    }

    /// Full validation: structure plus types, levels and authorized nesting.
    pub fn validate(&self, schema: &LabelSchema) -> Result<()> {
        self.validate_structure()?;
        let id = &self.source_id;
        for e in &self.entities {
            let t = schema
                .entity_type(&e.etype)
                .ok_or_else(|| Error::entry(id, format!("unknown entity type `{}`", e.etype)))?;
            if !t.allows(e.level) {
                return Err(Error::entry(
                    id,
                    format!("type `{}` not allowed at level {}", e.etype, e.level),
                ));
            }
            if let Some(p) = e.parent {
                let outer = &self.entities[p].etype;
                if !schema.contains(outer, &e.etype) {
                    return Err(Error::entry(
                        id,
                        format!("`{}` inside `{outer}` is not authorized", e.etype),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSequence {
    pub format: Format,
    pub mode: Mode,
    pub tags: Vec<String>,
}

impl TagSequence {
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

/// Prefixed tags for one joint label, in vocabulary order.
///
/// Under IOB2 a level-2 entity cannot continue into a token where its level-1
/// entity begins, so `B-X+I-Y` is never produced and is left out.
pub fn joint_label_tags(joint: &JointLabel, format: Format) -> Vec<String> {
    match (&joint.outer, &joint.inner, format) {
        (None, None, _) => vec![format!("{OUTSIDE}+{OUTSIDE}")],
        (Some(o), None, Format::Io) => vec![format!("I-{o}+{OUTSIDE}")],
        (Some(o), Some(i), Format::Io) => vec![format!("I-{o}+I-{i}")],
        (Some(o), None, Format::Iob2) => {
            vec![format!("B-{o}+{OUTSIDE}"), format!("I-{o}+{OUTSIDE}")]
        }
        (Some(o), Some(i), Format::Iob2) => vec![
            format!("B-{o}+B-{i}"),
            format!("I-{o}+B-{i}"),
            format!("I-{o}+I-{i}"),
        ],
        (None, Some(i), Format::Io) => vec![format!("{OUTSIDE}+I-{i}")],
        (None, Some(i), Format::Iob2) => {
            vec![format!("{OUTSIDE}+B-{i}"), format!("{OUTSIDE}+I-{i}")]
        }
    }
}

/// Joint tag vocabulary: the prefixed variants of every authorized joint label.
pub fn joint_vocabulary(schema: &LabelSchema, format: Format) -> Vec<String> {
    schema
        .joint_label_set()
        .iter()
        .flat_map(|j| joint_label_tags(j, format))
        .collect()
}

fn class_vocabulary<'a>(classes: impl Iterator<Item = &'a str>, format: Format) -> Vec<String> {
    let mut out = vec![OUTSIDE.to_string()];
    for c in classes {
        if format == Format::Iob2 {
            out.push(format!("B-{c}"));
        }
        out.push(format!("I-{c}"));
    }
    out
}

/// Single-level tag vocabulary for the types allowed at `level`.
pub fn level_vocabulary(schema: &LabelSchema, level: Level, format: Format) -> Vec<String> {
    let mut names: Vec<&str> = schema.types_at(level).map(|t| t.name.as_str()).collect();
    names.sort_unstable();
    class_vocabulary(names.into_iter(), format)
}

/// Tag vocabulary over flat types.
pub fn flat_vocabulary(schema: &LabelSchema, format: Format) -> Vec<String> {
    let types = schema.flat_types();
    class_vocabulary(types.iter().map(String::as_str), format)
}

/// Tag vocabulary induced by (schema, format, mode).
pub fn vocabulary(schema: &LabelSchema, format: Format, mode: Mode) -> Vec<String> {
    match mode {
        Mode::L1 => level_vocabulary(schema, Level::One, format),
        Mode::L2 => level_vocabulary(schema, Level::Two, format),
        Mode::Joint => joint_vocabulary(schema, format),
    }
}

fn level_tags(entities: &[Entity], level: Level, len: usize, format: Format) -> Vec<Tag> {
    let mut tags = vec![Tag::Outside; len];
    for e in entities.iter().filter(|e| e.level == level) {
        for (k, tag) in tags[e.start..e.end].iter_mut().enumerate() {
            *tag = if k == 0 && format == Format::Iob2 {
                Tag::begin(&e.etype)
            } else {
                Tag::inside(&e.etype)
            };
        }
    }
    tags
}

/// Encodes already-validated entities over `len` tokens.
pub fn encode_entities(entities: &[Entity], len: usize, format: Format, mode: Mode) -> TagSequence {
    let tags = match mode {
        Mode::L1 => level_tags(entities, Level::One, len, format)
            .iter()
            .map(Tag::to_string)
            .collect(),
        Mode::L2 => level_tags(entities, Level::Two, len, format)
            .iter()
            .map(Tag::to_string)
            .collect(),
        Mode::Joint => {
            let outer = level_tags(entities, Level::One, len, format);
            let inner = level_tags(entities, Level::Two, len, format);
            outer
                .iter()
                .zip(&inner)
                .map(|(o, i)| joint_tag(o, i))
                .collect()
        }
    };
    TagSequence { format, mode, tags }
}

pub fn encode(
    entry: &AnnotatedEntry,
    format: Format,
    mode: Mode,
    schema: &LabelSchema,
) -> Result<TagSequence> {
    entry.validate(schema)?;
    Ok(encode_entities(&entry.entities, entry.len(), format, mode))
}

/// Groups a single tag stream into `(class, start, end)` runs.
///
/// `group[i]` partitions tokens (the enclosing level-1 entity in joint mode);
/// an entity never continues across a group change.
fn runs(tags: &[Tag], group: Option<&[Option<usize>]>) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut open: Option<(String, usize)> = None;
    let same_group = |i: usize| match group {
        Some(g) => i > 0 && g[i] == g[i - 1],
        None => true,
    };
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            Tag::Outside => {
                if let Some((c, s)) = open.take() {
                    out.push((c, s, i));
                }
            }
            Tag::Inside { prefix, class } => {
                let continues = *prefix == Prefix::I
                    && open.as_ref().is_some_and(|(c, _)| c == class)
                    && same_group(i);
                if !continues {
                    if let Some((c, s)) = open.take() {
                        out.push((c, s, i));
                    }
                    open = Some((class.clone(), i));
                }
            }
        }
    }
    if let Some((c, s)) = open {
        out.push((c, s, tags.len()));
    }
    out
}

fn parse_all(tags: &[String]) -> Result<Vec<Tag>> {
    tags.iter().map(|t| t.parse()).collect()
}

/// Decodes tags into entities in canonical order.
///
/// L2 sequences yield level-2 entities with no parent. In joint mode a
/// level-2 entity's parent is the level-1 entity covering it, or none when
/// the token is outside every level-1 entity.
pub fn decode(seq: &TagSequence) -> Result<Vec<Entity>> {
    match seq.mode {
        Mode::L1 | Mode::L2 => {
            let level = if seq.mode == Mode::L1 { Level::One } else { Level::Two };
            let tags = parse_all(&seq.tags)?;
            Ok(runs(&tags, None)
                .into_iter()
                .map(|(etype, start, end)| Entity {
                    etype,
                    level,
                    start,
                    end,
                    parent: None,
                })
                .collect())
        }
        Mode::Joint => {
            let mut outer = Vec::with_capacity(seq.len());
            let mut inner = Vec::with_capacity(seq.len());
            for t in &seq.tags {
                let (o, i) = parse_joint_tag(t)?;
                outer.push(o);
                inner.push(i);
            }
            Ok(decode_levels(&outer, &inner))
        }
    }
}

pub(crate) fn decode_levels(outer: &[Tag], inner: &[Tag]) -> Vec<Entity> {
    let outer_runs = runs(outer, None);
    let mut owner: Vec<Option<usize>> = vec![None; outer.len()];
    for (k, (_, s, e)) in outer_runs.iter().enumerate() {
        for o in &mut owner[*s..*e] {
            *o = Some(k);
        }
    }
    let inner_runs = runs(inner, Some(&owner));
    let mut entities: Vec<Entity> = outer_runs
        .into_iter()
        .map(|(etype, start, end)| Entity::outer(&etype, start, end))
        .collect();
    for (etype, start, end) in inner_runs {
        entities.push(Entity {
            etype,
            level: Level::Two,
            start,
            end,
            parent: owner[start],
        });
    }
    canonicalize(&entities)
}

/// Re-encodes a sequence in another format through the span domain.
pub fn convert(seq: &TagSequence, to: Format) -> Result<TagSequence> {
    let entities = decode(seq)?;
    Ok(encode_entities(&entities, seq.len(), to, seq.mode))
}

fn check_pair(a: &TagSequence, b: &TagSequence) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::SequenceMismatch(format!(
            "lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.format != b.format {
        return Err(Error::SequenceMismatch(format!(
            "formats {} and {}",
            a.format, b.format
        )));
    }
    Ok(())
}

/// Concatenates level-1 and level-2 tags token by token.
pub fn compose_joint(l1: &TagSequence, l2: &TagSequence) -> Result<TagSequence> {
    check_pair(l1, l2)?;
    if l1.mode != Mode::L1 || l2.mode != Mode::L2 {
        return Err(Error::SequenceMismatch("expected an L1 and an L2 sequence".into()));
    }
    let tags = l1
        .tags
        .iter()
        .zip(&l2.tags)
        .map(|(a, b)| {
            let a: Tag = a.parse()?;
            let b: Tag = b.parse()?;
            Ok(joint_tag(&a, &b))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TagSequence {
        format: l1.format,
        mode: Mode::Joint,
        tags,
    })
}

pub fn decompose_joint(joint: &TagSequence) -> Result<(TagSequence, TagSequence)> {
    if joint.mode != Mode::Joint {
        return Err(Error::SequenceMismatch("expected a joint sequence".into()));
    }
    let mut l1 = Vec::with_capacity(joint.len());
    let mut l2 = Vec::with_capacity(joint.len());
    for t in &joint.tags {
        let (a, b) = parse_joint_tag(t)?;
        l1.push(a.to_string());
        l2.push(b.to_string());
    }
    Ok((
        TagSequence {
            format: joint.format,
            mode: Mode::L1,
            tags: l1,
        },
        TagSequence {
            format: joint.format,
            mode: Mode::L2,
            tags: l2,
        },
    ))
}

/// Flat tag sequence (mode `L1`) obtained by mapping each token's joint
/// label through the schema's flat mapping.
///
/// The positional prefix comes from the level whose class was kept; labels
/// outside the authorized set use the deepest non-O rule.
pub fn flat_tags(entities: &[Entity], len: usize, format: Format, schema: &LabelSchema) -> TagSequence {
    let outer = level_tags(entities, Level::One, len, format);
    let inner = level_tags(entities, Level::Two, len, format);
    let tags = outer
        .iter()
        .zip(&inner)
        .map(|(o, i)| flat_tag(o, i, schema).to_string())
        .collect();
    TagSequence {
        format,
        mode: Mode::L1,
        tags,
    }
}

pub(crate) fn flat_tag(outer: &Tag, inner: &Tag, schema: &LabelSchema) -> Tag {
    let joint = joint_label_of(outer, inner);
    let Some(flat) = schema.flat_type(&joint) else {
        return Tag::Outside;
    };
    let prefix = if inner.class() == Some(flat.as_str()) {
        inner.prefix()
    } else if outer.class().is_some() {
        outer.prefix()
    } else {
        inner.prefix()
    };
    Tag::Inside {
        prefix: prefix.unwrap_or(Prefix::I),
        class: flat,
    }
}

/// Number of entities lost when the entry is written as IO and read back.
pub fn io_merge_loss(entities: &[Entity], len: usize) -> usize {
    let io = encode_entities(entities, len, Format::Io, Mode::Joint);
    let back = decode(&io).expect("encoder output parses");
    entities.len().saturating_sub(back.len())
}

/// Checks every tag of a sequence against the induced vocabulary.
pub fn check_vocabulary(seq: &TagSequence, schema: &LabelSchema) -> Result<()> {
    let vocab: HashSet<String> = vocabulary(schema, seq.format, seq.mode).into_iter().collect();
    match seq.tags.iter().find(|t| !vocab.contains(*t)) {
        Some(t) => Err(Error::InvalidTag(t.clone())),
        None => Ok(()),
    }
}
