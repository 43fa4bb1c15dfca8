mod common;

use nested_tagger::hxe::{ce_gradient, ce_loss, hxe_loss, hxe_loss_and_gradient, softmax, HxeConfig};
use nested_tagger::schema::LabelTree;
use nested_tagger::Error;
use proptest::prelude::*;

fn logits(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-6.0f64..6.0, n)
}

fn case() -> impl Strategy<Value = (usize, Vec<f64>, usize, f64)> {
    (0usize..3).prop_flat_map(|shape| {
        let n = common::tree_shapes()[shape].1.leaf_count();
        (Just(shape), logits(n), 0..n, 0.0f64..1.5)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn flat_tree_alpha_zero_is_cross_entropy(z in logits(7), gold in 0usize..7) {
        let names: Vec<String> = (0..7).map(|i| format!("c{i}")).collect();
        let tree = LabelTree::flat(&names);
        let l = hxe_loss(&z, gold, &tree, &HxeConfig::default()).unwrap();
        prop_assert!((l - common::ce_oracle(&z, gold)).abs() < 1e-9);
        prop_assert!((ce_loss(&z, gold).unwrap() - common::ce_oracle(&z, gold)).abs() < 1e-9);
    }

    #[test]
    fn loss_matches_brute_force_oracle((shape, z, gold, alpha) in case()) {
        let tree = &common::tree_shapes()[shape].1;
        let l = hxe_loss(&z, gold, tree, &HxeConfig::with_alpha(alpha)).unwrap();
        let o = common::hxe_oracle(&common::softmax_oracle(&z), gold, tree, alpha);
        prop_assert!((l - o).abs() < 1e-9 * o.abs().max(1.0), "{} vs {}", l, o);
    }

    #[test]
    fn gradient_matches_central_differences((shape, z, gold, alpha) in case()) {
        let tree = &common::tree_shapes()[shape].1;
        let cfg = HxeConfig::with_alpha(alpha);
        let (_, g) = hxe_loss_and_gradient(&z, gold, tree, &cfg).unwrap();
        let h = 1e-5;
        for k in 0..z.len() {
            let mut up = z.clone();
            up[k] += h;
            let mut down = z.clone();
            down[k] -= h;
            let fd = (hxe_loss(&up, gold, tree, &cfg).unwrap() - hxe_loss(&down, gold, tree, &cfg).unwrap()) / (2.0 * h);
            prop_assert!((fd - g[k]).abs() <= 1e-4 * fd.abs().max(g[k].abs()).max(1e-3), "k={} fd={} g={}", k, fd, g[k]);
        }
    }

    #[test]
    fn loss_is_shift_invariant((shape, z, gold, alpha) in case(), c in -50.0f64..50.0) {
        let tree = &common::tree_shapes()[shape].1;
        let cfg = HxeConfig::with_alpha(alpha);
        let shifted: Vec<f64> = z.iter().map(|x| x + c).collect();
        let a = hxe_loss(&z, gold, tree, &cfg).unwrap();
        let b = hxe_loss(&shifted, gold, tree, &cfg).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * a.max(1.0));
    }

    #[test]
    fn loss_is_non_negative_and_gradient_sums_to_zero((shape, z, gold, alpha) in case()) {
        let tree = &common::tree_shapes()[shape].1;
        let (l, g) = hxe_loss_and_gradient(&z, gold, tree, &HxeConfig::with_alpha(alpha)).unwrap();
        prop_assert!(l >= 0.0 && l.is_finite());
        prop_assert!(g.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn ce_gradient_is_softmax_minus_onehot(z in logits(5), gold in 0usize..5) {
        let g = ce_gradient(&z, gold).unwrap();
        let p = common::softmax_oracle(&z);
        for k in 0..5 {
            let want = p[k] - if k == gold { 1.0 } else { 0.0 };
            prop_assert!((g[k] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_sums_to_one(z in logits(12)) {
        let d = softmax(&z).unwrap();
        prop_assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn single_precision_agrees_with_double() {
    let (_, tree) = common::tree_shapes().remove(2);
    let z64: Vec<f64> = (0..tree.leaf_count()).map(|i| ((i * 13) % 7) as f64 * 0.4 - 1.0).collect();
    let z32: Vec<f32> = z64.iter().map(|&x| x as f32).collect();
    let a = hxe_loss(&z64, 4, &tree, &HxeConfig::with_alpha(0.5)).unwrap();
    let b = hxe_loss(&z32, 4, &tree, &HxeConfig::with_alpha(0.5f32)).unwrap();
    assert!((a - b as f64).abs() < 1e-4);
}

#[test]
fn non_finite_logits_are_rejected() {
    let tree = LabelTree::flat(&["a", "b"]);
    let err = hxe_loss(&[f64::INFINITY, 0.0], 0, &tree, &HxeConfig::default()).unwrap_err();
    assert!(matches!(err, Error::NonFinite));
    assert!(matches!(hxe_loss(&[0.0, 0.0], 5, &tree, &HxeConfig::default()), Err(Error::UnknownNode(_))));
}
