mod common;

use std::collections::HashMap;

use nested_tagger::align::{align_chars, build_noisy_corpus, project_entry, EditOp};
use nested_tagger::corpus::{noise_inject, NoiseConfig};
use nested_tagger::{AnnotatedEntry, LabelSchema, Level};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn short_text() -> impl Strategy<Value = String> {
    proptest::collection::vec(prop::sample::select(vec!['a', 'b', 'c', 'é', ' ', '1', '.']), 0..40)
        .prop_map(|v| v.into_iter().collect())
}

fn types_in_order(e: &AnnotatedEntry, level: Level) -> Vec<String> {
    e.entities.iter().filter(|x| x.level == level).map(|x| x.etype.clone()).collect()
}

fn is_subsequence(small: &[String], big: &[String]) -> bool {
    let mut it = big.iter();
    small.iter().all(|s| it.any(|b| b == s))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn alignment_cost_is_edit_distance(a in short_text(), b in short_text()) {
        let map = align_chars(&a, &b);
        prop_assert_eq!(map.cost(), common::levenshtein(&a, &b));
        prop_assert_eq!(map.replay(&a, &b), b.clone());
        prop_assert_eq!(map.gold_to_noisy.len(), a.chars().count());
        let deleted = map.ops.iter().filter(|o| **o == EditOp::Delete).count();
        prop_assert_eq!(map.gold_to_noisy.iter().filter(|x| x.is_none()).count(), deleted);
    }

    #[test]
    fn alignment_is_monotone(a in short_text(), b in short_text()) {
        let map = align_chars(&a, &b);
        let targets: Vec<usize> = map.gold_to_noisy.iter().flatten().copied().collect();
        prop_assert!(targets.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn identity_projection_keeps_annotations(seed in any::<u64>()) {
        let schema = LabelSchema::paris_directories();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = common::random_entry(&mut rng, &schema, "e", 20);
        let (out, report) = project_entry(&e, &e.text, &schema);
        if e.entities.is_empty() {
            prop_assert!(out.is_none());
        } else {
            prop_assert_eq!(out.unwrap(), e.clone());
            prop_assert_eq!(report.entities_dropped, 0);
        }
    }

    #[test]
    fn noisy_projection_preserves_order_and_nesting(seed in any::<u64>(), rate in 0.0f64..0.3) {
        let schema = LabelSchema::paris_directories();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = common::random_entry(&mut rng, &schema, "e", 20);
        let noisy = noise_inject(&e.text, &NoiseConfig::with_rate(rate, seed));
        let (out, report) = project_entry(&e, &noisy, &schema);
        prop_assert_eq!(report.entities_projected + report.entities_dropped, e.entities.len());
        if let Some(p) = out {
            p.validate(&schema).unwrap();
            prop_assert_eq!(p.entities.len(), report.entities_projected);
            prop_assert_eq!(&p.text, &noisy);
            for level in [Level::One, Level::Two] {
                prop_assert!(is_subsequence(&types_in_order(&p, level), &types_in_order(&e, level)));
            }
        } else {
            prop_assert_eq!(report.entities_projected, 0);
        }
    }
}

#[test]
fn missing_and_empty_noisy_texts_drop_entries() {
    let schema = LabelSchema::paris_directories();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let gold: Vec<AnnotatedEntry> = (0..20)
        .map(|i| common::random_entry(&mut rng, &schema, &format!("e{i}"), 12))
        .filter(|e| !e.entities.is_empty())
        .collect();
    let (out, report) = build_noisy_corpus(&gold, &HashMap::new(), &schema);
    assert!(out.is_empty());
    assert_eq!(report.entries_missing, gold.len());
    let blank: HashMap<String, String> = gold.iter().map(|e| (e.source_id.clone(), String::new())).collect();
    let (out, report) = build_noisy_corpus(&gold, &blank, &schema);
    assert!(out.is_empty());
    assert_eq!(report.entries_dropped, gold.len());
    assert_eq!(report.entries_missing, 0);
}
