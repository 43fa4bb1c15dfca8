//! Hierarchical cross-entropy over a [`LabelTree`], and plain categorical
//! cross-entropy.
//!
//! A single softmax over the leaves gives every node a probability (the sum
//! of its leaves). The loss for gold leaf `g` walks the root-to-`g` path:
//!
//! ```text
//! L = - sum_{edge parent -> node on path} w(node) * ln( P(node) / P(parent) )
//! w(node) = exp(-alpha * depth(node))
//! ```
//!
//! With `alpha = 0` the sum telescopes to `-ln p(g)`, the plain
//! cross-entropy. With `alpha > 0` deeper edges count less, so placing mass
//! on a leaf that shares more ancestors with the gold leaf costs less.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::schema::{LabelTree, NodeId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HxeConfig<T> {
    /// Depth decay of the edge weights; 0 gives uniform weights.
    pub alpha: T,
    /// Floor applied to conditional probabilities inside logarithms.
    pub epsilon: T,
}

impl<T: Scalar> Default for HxeConfig<T> {
    fn default() -> Self {
        HxeConfig {
            alpha: T::zero(),
            epsilon: T::from_f64_lossy(1e-12),
        }
    }
}

impl<T: Scalar> HxeConfig<T> {
    pub fn with_alpha(alpha: T) -> Self {
        HxeConfig {
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= T::zero()) || !self.alpha.is_finite() {
            return Err(Error::Config("alpha must be finite and >= 0".into()));
        }
        if !(self.epsilon > T::zero() && self.epsilon <= T::from_f64_lossy(1e-6)) {
            return Err(Error::Config("epsilon must lie in (0, 1e-6]".into()));
        }
        Ok(())
    }
}

/// Probability vector over the tree leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafDistribution<T> {
    pub probs: Vec<T>,
}

impl<T: Scalar> LeafDistribution<T> {
    pub fn new(probs: Vec<T>) -> Result<Self> {
        let tol = T::from_f64_lossy(1e-9);
        let mut sum = T::zero();
        for &p in &probs {
            if !p.is_finite() || p < T::zero() {
                return Err(Error::NonFinite);
            }
            sum = sum + p;
        }
        if (sum - T::one()).abs() > tol.max(T::epsilon() * T::from_usize_lossy(probs.len())) {
            return Err(Error::Config(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(LeafDistribution { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

fn check_finite<T: Scalar>(logits: &[T]) -> Result<()> {
    if logits.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

/// Max-shifted softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Result<LeafDistribution<T>> {
    check_finite(logits)?;
    Ok(LeafDistribution {
        probs: softmax_unchecked(logits),
    })
}

pub(crate) fn softmax_unchecked<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| a.max(b));
    let mut exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum = exps.iter().fold(T::zero(), |a, &b| a + b);
    for e in &mut exps {
        *e = *e / sum;
    }
    exps
}

fn log_sum_exp<T: Scalar>(logits: &[T]) -> T {
    let max = logits
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| a.max(b));
    let sum = logits.iter().fold(T::zero(), |a, &z| a + (z - max).exp());
    max + sum.ln()
}

/// Total probability of the leaves under `node`; exactly 1 at the root.
pub fn node_probability<T: Scalar>(
    dist: &LeafDistribution<T>,
    node: NodeId,
    tree: &LabelTree,
) -> Result<T> {
    let n = tree
        .node(node)
        .ok_or_else(|| Error::UnknownNode(format!("node {}", node.0)))?;
    if dist.len() != tree.leaf_count() {
        return Err(Error::Config(format!(
            "distribution has {} entries, tree has {} leaves",
            dist.len(),
            tree.leaf_count()
        )));
    }
    Ok(subtree_mass(&dist.probs, node, tree, n.parent.is_none()))
}

fn subtree_mass<T: Scalar>(probs: &[T], node: NodeId, tree: &LabelTree, is_root: bool) -> T {
    if is_root {
        return T::one();
    }
    tree.node(node)
        .expect("node exists")
        .leaves
        .iter()
        .fold(T::zero(), |a, &l| a + probs[l])
}

fn edge_weight<T: Scalar>(depth: usize, cfg: &HxeConfig<T>) -> T {
    (-(cfg.alpha * T::from_usize_lossy(depth))).exp()
}

fn check_inputs<T: Scalar>(n: usize, gold: usize, tree: &LabelTree) -> Result<()> {
    if n != tree.leaf_count() {
        return Err(Error::Config(format!(
            "{} logits for a tree with {} leaves",
            n,
            tree.leaf_count()
        )));
    }
    if gold >= n {
        return Err(Error::UnknownNode(format!("leaf {gold}")));
    }
    Ok(())
}

/// Edge terms along the gold path: (node depth, P(node), P(parent), node, parent).
fn path_masses<T: Scalar>(
    probs: &[T],
    gold: usize,
    tree: &LabelTree,
) -> Vec<(usize, T, T, NodeId, NodeId)> {
    let path = tree.path_to_leaf(gold).expect("gold leaf checked");
    let mut out = Vec::with_capacity(path.len() - 1);
    let mut parent_mass = T::one();
    for w in path.windows(2) {
        let (parent, node) = (w[0], w[1]);
        let mass = subtree_mass(probs, node, tree, false);
        out.push((tree.node(node).unwrap().depth, mass, parent_mass, node, parent));
        parent_mass = mass;
    }
    out
}

fn conditional<T: Scalar>(mass: T, parent_mass: T) -> T {
    if parent_mass > T::zero() {
        mass / parent_mass
    } else {
        T::zero()
    }
}

/// Loss for an explicit leaf distribution.
pub fn hxe_loss_from_probs<T: Scalar>(
    dist: &LeafDistribution<T>,
    gold_leaf: usize,
    tree: &LabelTree,
    cfg: &HxeConfig<T>,
) -> Result<T> {
    check_inputs::<T>(dist.len(), gold_leaf, tree)?;
    let mut loss = T::zero();
    for (depth, mass, parent_mass, _, _) in path_masses(&dist.probs, gold_leaf, tree) {
        let r = conditional(mass, parent_mass).max(cfg.epsilon);
        loss = loss - edge_weight(depth, cfg) * r.ln();
    }
    Ok(loss.max(T::zero()))
}

pub fn hxe_loss<T: Scalar>(
    logits: &[T],
    gold_leaf: usize,
    tree: &LabelTree,
    cfg: &HxeConfig<T>,
) -> Result<T> {
    check_finite(logits)?;
    check_inputs::<T>(logits.len(), gold_leaf, tree)?;
    let dist = LeafDistribution {
        probs: softmax_unchecked(logits),
    };
    hxe_loss_from_probs(&dist, gold_leaf, tree, cfg)
}

/// Analytic gradient of [`hxe_loss`] with respect to the logits.
pub fn hxe_gradient<T: Scalar>(
    logits: &[T],
    gold_leaf: usize,
    tree: &LabelTree,
    cfg: &HxeConfig<T>,
) -> Result<Vec<T>> {
    hxe_loss_and_gradient(logits, gold_leaf, tree, cfg).map(|(_, g)| g)
}

/// Loss and gradient in one pass.
///
/// For an edge `parent -> node`, `d ln(P(node)/P(parent)) / dz_k` equals
/// `p_k [k under node] / P(node) - p_k [k under parent] / P(parent)`.
/// Edges whose conditional sits at the epsilon floor contribute nothing.
pub fn hxe_loss_and_gradient<T: Scalar>(
    logits: &[T],
    gold_leaf: usize,
    tree: &LabelTree,
    cfg: &HxeConfig<T>,
) -> Result<(T, Vec<T>)> {
    check_finite(logits)?;
    check_inputs::<T>(logits.len(), gold_leaf, tree)?;
    let probs = softmax_unchecked(logits);
    let mut grad = vec![T::zero(); probs.len()];
    let mut loss = T::zero();
    for (depth, mass, parent_mass, node, parent) in path_masses(&probs, gold_leaf, tree) {
        let w = edge_weight(depth, cfg);
        let r = conditional(mass, parent_mass);
        if r <= cfg.epsilon {
            loss = loss - w * cfg.epsilon.ln();
            continue;
        }
        loss = loss - w * r.ln();
        let under_node = &tree.node(node).unwrap().leaves;
        for &k in &tree.node(parent).unwrap().leaves {
            let from_node = if under_node.binary_search(&k).is_ok() {
                probs[k] / mass
            } else {
                T::zero()
            };
            grad[k] = grad[k] + w * (probs[k] / parent_mass - from_node);
        }
    }
    Ok((loss.max(T::zero()), grad))
}

/// Categorical cross-entropy `logsumexp(z) - z_gold`.
pub fn ce_loss<T: Scalar>(logits: &[T], gold: usize) -> Result<T> {
    check_finite(logits)?;
    if gold >= logits.len() {
        return Err(Error::UnknownNode(format!("class {gold}")));
    }
    Ok(log_sum_exp(logits) - logits[gold])
}

/// `softmax(z) - onehot(gold)`.
pub fn ce_gradient<T: Scalar>(logits: &[T], gold: usize) -> Result<Vec<T>> {
    ce_loss_and_gradient(logits, gold).map(|(_, g)| g)
}

pub fn ce_loss_and_gradient<T: Scalar>(logits: &[T], gold: usize) -> Result<(T, Vec<T>)> {
    let loss = ce_loss(logits, gold)?;
    let mut grad = softmax_unchecked(logits);
    grad[gold] = grad[gold] - T::one();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::LabelSchema;
    use crate::tagcodec::Format;

    #[test]
    fn softmax_basic_cases() {
        let d = softmax(&[0.0f64; 4]).unwrap();
        assert!(d.probs.iter().all(|&p| p == 0.25));
        let d = softmax(&[1000.0f64, 0.0]).unwrap();
        assert!((d.probs[0] - 1.0).abs() < 1e-12 && d.probs[1] < 1e-300);
        assert!(matches!(softmax(&[f64::NAN, 0.0]), Err(Error::NonFinite)));
        assert!(matches!(softmax(&[f64::INFINITY]), Err(Error::NonFinite)));
        let d32 = softmax(&[0.5f32, -0.5, 2.0]).unwrap();
        assert!((d32.probs.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn node_probabilities() {
        let schema = LabelSchema::paris_directories();
        let tree = schema.build_label_tree(Format::Io);
        let logits: Vec<f64> = (0..tree.leaf_count()).map(|i| (i as f64 * 0.37).sin()).collect();
        let d = softmax(&logits).unwrap();
        assert_eq!(node_probability(&d, tree.root(), &tree).unwrap(), 1.0);
        let leaf = tree.leaf_node(3).unwrap();
        assert_eq!(node_probability(&d, leaf, &tree).unwrap(), d.probs[3]);
        let spat = tree.find("SPAT").unwrap();
        let names = tree.leaf_names();
        let expected: f64 = ["I-SPAT+I-CARDINAL", "I-SPAT+I-FT", "I-SPAT+I-LOC", "I-SPAT+O"]
            .iter()
            .map(|n| d.probs[names.iter().position(|x| x == n).unwrap()])
            .sum();
        assert!((node_probability(&d, spat, &tree).unwrap() - expected).abs() < 1e-15);
        assert!(node_probability(&d, NodeId(9999), &tree).is_err());
    }

    #[test]
    fn flat_tree_uniform_binary() {
        let tree = LabelTree::flat(&["a", "b"]);
        let l = hxe_loss(&[0.0f64, 0.0], 0, &tree, &HxeConfig::default()).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let ce = ce_loss(&[0.0f64, 0.0], 0).unwrap();
        assert!((ce - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confident_gold_has_near_zero_loss() {
        let schema = LabelSchema::paris_directories();
        let tree = schema.build_label_tree(Format::Io);
        let mut logits = vec![0.0f64; tree.leaf_count()];
        logits[5] = 60.0;
        let l = hxe_loss(&logits, 5, &tree, &HxeConfig::with_alpha(0.5)).unwrap();
        assert!(l < 1e-20, "{l}");
    }

    #[test]
    fn flat_tree_gradient_is_ce_gradient() {
        let tree = LabelTree::flat(&["a", "b", "c"]);
        let z = [0.3f64, -1.2, 2.0];
        let g = hxe_gradient(&z, 1, &tree, &HxeConfig::default()).unwrap();
        let ce = ce_gradient(&z, 1).unwrap();
        assert_eq!(g, ce);
    }

    #[test]
    fn gradient_sums_to_zero() {
        let schema = LabelSchema::paris_directories();
        let tree = schema.build_label_tree(Format::Iob2);
        let z: Vec<f64> = (0..tree.leaf_count()).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let g = hxe_gradient(&z, 11, &tree, &HxeConfig::with_alpha(0.7)).unwrap();
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn bad_inputs() {
        let tree = LabelTree::flat(&["a", "b"]);
        let cfg = HxeConfig::default();
        assert!(hxe_loss(&[0.0f64, 1.0, 2.0], 0, &tree, &cfg).is_err());
        assert!(hxe_loss(&[0.0f64, 1.0], 2, &tree, &cfg).is_err());
        assert!(matches!(hxe_loss(&[f64::NAN, 1.0], 0, &tree, &cfg), Err(Error::NonFinite)));
        assert!(HxeConfig { alpha: -1.0f64, epsilon: 1e-12 }.validate().is_err());
        assert!(HxeConfig { alpha: 0.0f64, epsilon: 0.1 }.validate().is_err());
        assert!(HxeConfig::<f64>::default().validate().is_ok());
    }

    #[test]
    fn degenerate_distribution_is_floored() {
        let tree = LabelTree::flat(&["a", "b"]);
        let d = LeafDistribution::new(vec![0.0f64, 1.0]).unwrap();
        let l = hxe_loss_from_probs(&d, 0, &tree, &HxeConfig::default()).unwrap();
        assert!((l + 1e-12f64.ln()).abs() < 1e-9);
        assert!(LeafDistribution::new(vec![0.5f64, 0.6]).is_err());
    }
}
