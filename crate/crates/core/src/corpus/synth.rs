use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Corpus, Provenance};
use crate::schema::{LabelSchema, Level};
use crate::tagcodec::{AnnotatedEntry, Entity};

fn lines(s: &'static str) -> Vec<&'static str> {
    s.lines().map(str::trim).filter(|l| !l.is_empty()).collect()
}

/// Word lists driving the synthetic directory-entry grammar.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub surnames: Vec<&'static str>,
    pub firstnames: Vec<&'static str>,
    pub person_forms: Vec<&'static str>,
    pub activities: Vec<&'static str>,
    pub desc_tails: Vec<&'static str>,
    pub street_types: Vec<&'static str>,
    pub streets: Vec<&'static str>,
    pub features: Vec<&'static str>,
    pub person_titles: Vec<&'static str>,
    pub rewards: Vec<&'static str>,
    pub titles: Vec<&'static str>,
}

impl Lexicon {
    pub fn bundled() -> Self {
        Lexicon {
            surnames: lines(include_str!("../../data/lexicon/surnames.txt")),
            firstnames: lines(include_str!("../../data/lexicon/firstnames.txt")),
            person_forms: lines(include_str!("../../data/lexicon/person_forms.txt")),
            activities: lines(include_str!("../../data/lexicon/activities.txt")),
            desc_tails: lines(include_str!("../../data/lexicon/desc_tails.txt")),
            street_types: lines(include_str!("../../data/lexicon/street_types.txt")),
            streets: lines(include_str!("../../data/lexicon/streets.txt")),
            features: lines(include_str!("../../data/lexicon/features.txt")),
            person_titles: lines(include_str!("../../data/lexicon/titles_person.txt")),
            rewards: lines(include_str!("../../data/lexicon/rewards.txt")),
            titles: lines(include_str!("../../data/lexicon/titles.txt")),
        }
    }
}

/// Probability of each optional part of an entry.
struct Rates;

impl Rates {
    const PERSON_TITLE: f64 = 0.036;
    const DESC: f64 = 0.044;
    const DESC_REWARD: f64 = 0.25;
    const ACT: f64 = 0.70;
    const TITLE: f64 = 0.002;
    const ADDRESS: f64 = 0.985;
    const SECOND_ADDRESS: f64 = 0.04;
    const ADJACENT_ADDRESS: f64 = 0.5;
    const SECOND_STREET: f64 = 0.08;
    const NUMBER: f64 = 0.95;
    const BIS: f64 = 0.05;
    const FEATURE: f64 = 0.009;
}

/// Text under construction with character-span annotations.
struct Builder {
    text: String,
    chars: usize,
    spans: Vec<(&'static str, Level, usize, usize, Option<usize>)>,
}

impl Builder {
    fn new() -> Self {
        Builder { text: String::new(), chars: 0, spans: Vec::new() }
    }

    fn push(&mut self, s: &str) {
        self.text.push_str(s);
        self.chars += s.chars().count();
    }

    fn span(&mut self, etype: &'static str, level: Level, start: usize, parent: Option<usize>) -> usize {
        self.spans.push((etype, level, start, self.chars, parent));
        self.spans.len() - 1
    }

    fn finish(self, id: String) -> AnnotatedEntry {
        let mut entry = AnnotatedEntry::new(&id, &self.text, vec![]);
        let tokens = &entry.tokens;
        let entities = self
            .spans
            .iter()
            .map(|&(etype, level, cs, ce, parent)| {
                let start = tokens.iter().position(|t| t.start >= cs).expect("span start on a token");
                let end = tokens.iter().rposition(|t| t.end <= ce).expect("span end on a token") + 1;
                Entity { etype: etype.to_string(), level, start, end, parent }
            })
            .collect();
        entry.entities = entities;
        entry.with_canonical_entities()
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).copied().unwrap_or("")
}

fn person(b: &mut Builder, lex: &Lexicon, rng: &mut ChaCha8Rng) {
    let start = b.chars;
    let form = pick(rng, &lex.person_forms);
    let s = pick(rng, &lex.surnames);
    let mut s2 = pick(rng, &lex.surnames);
    if s2 == s {
        s2 = lex.surnames[0];
    }
    let f = pick(rng, &lex.firstnames);
    b.push(&form.replace("{S2}", s2).replace("{S}", s).replace("{F}", f));
    let per = b.spans.len();
    if rng.gen_bool(Rates::PERSON_TITLE) {
        b.push(", ");
        let t = b.chars;
        b.push(pick(rng, &lex.person_titles));
        b.span("PER", Level::One, start, None);
        b.span("TITREH", Level::Two, t, Some(per));
    } else {
        b.span("PER", Level::One, start, None);
    }
}

fn description(b: &mut Builder, lex: &Lexicon, rng: &mut ChaCha8Rng) {
    let start = b.chars;
    let desc = b.spans.len();
    let mut inner = Vec::new();
    let a = b.chars;
    b.push(pick(rng, &lex.activities));
    inner.push(("ACT", a, b.chars));
    b.push(" ");
    b.push(pick(rng, &lex.desc_tails));
    if rng.gen_bool(Rates::DESC_REWARD) {
        b.push(", ");
        let r = b.chars;
        b.push(pick(rng, &lex.rewards));
        inner.push(("TITREP", r, b.chars));
    }
    b.span("DESC", Level::One, start, None);
    for (t, s, e) in inner {
        b.spans.push((t, Level::Two, s, e, Some(desc)));
    }
}

fn street(b: &mut Builder, lex: &Lexicon, rng: &mut ChaCha8Rng, inner: &mut Vec<(&'static str, usize, usize)>) {
    let s = b.chars;
    b.push(pick(rng, &lex.street_types));
    b.push(" ");
    b.push(pick(rng, &lex.streets));
    inner.push(("LOC", s, b.chars));
    if rng.gen_bool(Rates::NUMBER) {
        b.push(", ");
        let n = b.chars;
        let num: u32 = if rng.gen_bool(0.6) { rng.gen_range(1..40) } else { rng.gen_range(1..250) };
        b.push(&num.to_string());
        if rng.gen_bool(Rates::BIS) {
            b.push(" bis");
        }
        inner.push(("CARDINAL", n, b.chars));
    }
}

fn address(b: &mut Builder, lex: &Lexicon, rng: &mut ChaCha8Rng) {
    let start = b.chars;
    let mut inner = Vec::new();
    if rng.gen_bool(Rates::FEATURE) {
        let f = b.chars;
        b.push(pick(rng, &lex.features));
        inner.push(("FT", f, b.chars));
        b.push(", ");
    }
    street(b, lex, rng, &mut inner);
    if rng.gen_bool(Rates::SECOND_STREET) {
        b.push(if rng.gen_bool(0.5) { ", et " } else { " et " });
        street(b, lex, rng, &mut inner);
    }
    let spat = b.spans.len();
    b.span("SPAT", Level::One, start, None);
    for (t, s, e) in inner {
        b.spans.push((t, Level::Two, s, e, Some(spat)));
    }
}

fn entry(id: String, lex: &Lexicon, rng: &mut ChaCha8Rng) -> AnnotatedEntry {
    let mut b = Builder::new();
    person(&mut b, lex, rng);
    if rng.gen_bool(Rates::DESC) {
        b.push(", ");
        description(&mut b, lex, rng);
    } else if rng.gen_bool(Rates::ACT) {
        b.push(", ");
        let s = b.chars;
        b.push(pick(rng, &lex.activities));
        b.span("ACT", Level::One, s, None);
    }
    if rng.gen_bool(Rates::TITLE) {
        b.push(", ");
        let s = b.chars;
        b.push(pick(rng, &lex.titles));
        b.span("TITRE", Level::One, s, None);
    }
    if rng.gen_bool(Rates::ADDRESS) {
        b.push(", ");
        address(&mut b, lex, rng);
        if rng.gen_bool(Rates::SECOND_ADDRESS) {
            b.push(if rng.gen_bool(Rates::ADJACENT_ADDRESS) { " " } else { " ; " });
            address(&mut b, lex, rng);
        }
    }
    b.push(".");
    b.finish(id)
}

/// Keeps only the entities the schema accepts, dropping children of
/// rejected parents.
fn restrict(entry: AnnotatedEntry, schema: &LabelSchema) -> AnnotatedEntry {
    let ok_type = |e: &Entity| schema.entity_type(&e.etype).is_some_and(|t| t.allows(e.level));
    let mut keep = vec![false; entry.entities.len()];
    for (i, e) in entry.entities.iter().enumerate() {
        keep[i] = ok_type(e)
            && match e.parent {
                None => true,
                Some(p) => keep[p] && schema.contains(&entry.entities[p].etype, &e.etype),
            };
    }
    let mut remap = vec![None; keep.len()];
    let mut kept = Vec::new();
    for (i, e) in entry.entities.iter().enumerate() {
        if keep[i] {
            remap[i] = Some(kept.len());
            let mut e = e.clone();
            e.parent = e.parent.and_then(|p| remap[p]);
            kept.push(e);
        }
    }
    AnnotatedEntry { entities: kept, ..entry }
}

/// Generates `n` synthetic directory entries, deterministic per seed.
///
/// Entities whose type or nesting the schema does not accept are omitted.
pub fn synth_generate(n: usize, schema: &LabelSchema, seed: u64) -> Corpus {
    let lex = Lexicon::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = (0..n)
        .map(|i| restrict(entry(format!("synth-{i:06}"), &lex, &mut rng), schema))
        .collect();
    Corpus::new(entries, schema, Provenance::Synthetic).expect("generator output is schema-valid")
}
