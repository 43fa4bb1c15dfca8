//! Entity types, the two-level part-of hierarchy and the structures derived
//! from it: the authorized joint-label set, the label tree used by the
//! hierarchical loss, and the nested-to-flat type mapping.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tagcodec::{self, Format};

/// Bundled schema for the Paris trade directories.
pub const PARIS_DIRECTORIES: &str = include_str!("../data/paris_directories.schema");

/// The outside symbol.
pub const OUTSIDE: &str = "O";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Level {
    One,
    Two,
}

impl Level {
    pub fn number(self) -> u8 {
        match self {
            Level::One => 1,
            Level::Two => 2,
        }
    }
}

impl TryFrom<u8> for Level {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Level::One),
            2 => Ok(Level::Two),
            other => Err(format!("entity level must be 1 or 2, got {other}")),
        }
    }
}

impl From<Level> for u8 {
    fn from(l: Level) -> u8 {
        l.number()
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityType {
    pub name: String,
    pub levels: BTreeSet<Level>,
}

impl EntityType {
    pub fn new(name: &str, levels: &[Level]) -> Self {
        EntityType {
            name: name.to_string(),
            levels: levels.iter().copied().collect(),
        }
    }

    pub fn allows(&self, level: Level) -> bool {
        self.levels.contains(&level)
    }
}

/// A per-token composite label: the level-1 class and the level-2 class,
/// either of which may be outside (`None`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JointLabel {
    pub outer: Option<String>,
    pub inner: Option<String>,
}

impl JointLabel {
    pub fn new(outer: Option<&str>, inner: Option<&str>) -> Self {
        JointLabel {
            outer: outer.map(str::to_string),
            inner: inner.map(str::to_string),
        }
    }

    pub fn outside() -> Self {
        JointLabel {
            outer: None,
            inner: None,
        }
    }

    pub fn is_outside(&self) -> bool {
        self.outer.is_none() && self.inner.is_none()
    }

    pub fn outer_name(&self) -> &str {
        self.outer.as_deref().unwrap_or(OUTSIDE)
    }

    pub fn inner_name(&self) -> &str {
        self.inner.as_deref().unwrap_or(OUTSIDE)
    }

    fn sort_key(&self) -> (&str, &str) {
        (self.outer_name(), self.inner_name())
    }
}

impl fmt::Display for JointLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}", self.outer_name(), self.inner_name())
    }
}

impl FromStr for JointLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once('+')
            .ok_or_else(|| Error::InvalidTag(s.to_string()))?;
        let side = |x: &str| -> Result<Option<String>> {
            if x == OUTSIDE {
                Ok(None)
            } else if x.is_empty() || x.contains(['+', '-']) {
                Err(Error::InvalidTag(s.to_string()))
            } else {
                Ok(Some(x.to_string()))
            }
        };
        Ok(JointLabel {
            outer: side(a)?,
            inner: side(b)?,
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaDoc {
    types: BTreeMap<String, Vec<u8>>,
    #[serde(default)]
    containment: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    flat_map: BTreeMap<String, String>,
}

/// Validated entity schema. Immutable once built.
#[derive(Debug, Clone)]
pub struct LabelSchema {
    types: Vec<EntityType>,
    containment: BTreeMap<String, BTreeSet<String>>,
    flat_overrides: BTreeMap<JointLabel, Option<String>>,
    joint_sorted: Vec<JointLabel>,
    joint_set: HashSet<JointLabel>,
}

impl PartialEq for LabelSchema {
    fn eq(&self, other: &Self) -> bool {
        self.types == other.types
            && self.containment == other.containment
            && self.flat_overrides == other.flat_overrides
    }
}

fn check_type_name(name: &str) -> Result<()> {
    if name.is_empty()
        || name == OUTSIDE
        || !name.chars().all(|c| c.is_alphanumeric() || c == '_')
    {
        return Err(Error::Schema(format!(
            "invalid type name `{name}` (alphanumerics and `_` only, not `O`)"
        )));
    }
    Ok(())
}

impl LabelSchema {
    pub fn new(
        types: Vec<EntityType>,
        containment: BTreeMap<String, BTreeSet<String>>,
    ) -> Result<Self> {
        Self::with_flat_overrides(types, containment, BTreeMap::new())
    }

    pub fn with_flat_overrides(
        types: Vec<EntityType>,
        containment: BTreeMap<String, BTreeSet<String>>,
        flat_overrides: BTreeMap<JointLabel, Option<String>>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &types {
            check_type_name(&t.name)?;
            if !seen.insert(t.name.as_str()) {
                return Err(Error::Schema(format!("duplicate type `{}`", t.name)));
            }
            if t.levels.is_empty() {
                return Err(Error::Schema(format!("type `{}` has no level", t.name)));
            }
        }
        let lookup = |name: &str| types.iter().find(|t| t.name == name);

        for (parent, children) in &containment {
            let p = lookup(parent).ok_or_else(|| {
                Error::Schema(format!("containment references unknown type `{parent}`"))
            })?;
            if !p.allows(Level::One) {
                return Err(Error::Schema(format!(
                    "containment parent `{parent}` is not a level-1 type"
                )));
            }
            for child in children {
                let c = lookup(child).ok_or_else(|| {
                    Error::Schema(format!("containment references unknown type `{child}`"))
                })?;
                if !c.allows(Level::Two) {
                    return Err(Error::Schema(format!(
                        "contained type `{child}` is not a level-2 type"
                    )));
                }
            }
        }
        for t in types.iter().filter(|t| t.allows(Level::Two)) {
            if !containment.values().any(|c| c.contains(&t.name)) {
                return Err(Error::Schema(format!(
                    "level-2 type `{}` is not contained by any level-1 type",
                    t.name
                )));
            }
        }

        let mut joint: Vec<JointLabel> = vec![JointLabel::outside()];
        for t in types.iter().filter(|t| t.allows(Level::One)) {
            joint.push(JointLabel::new(Some(&t.name), None));
            if let Some(children) = containment.get(&t.name) {
                for c in children {
                    joint.push(JointLabel::new(Some(&t.name), Some(c)));
                }
            }
        }
        joint.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        let joint_set: HashSet<JointLabel> = joint.iter().cloned().collect();

        for (j, flat) in &flat_overrides {
            if !joint_set.contains(j) {
                return Err(Error::Schema(format!(
                    "flat_map key `{j}` is not an authorized joint label"
                )));
            }
            if let Some(f) = flat {
                check_type_name(f)?;
            }
        }

        Ok(LabelSchema {
            types,
            containment,
            flat_overrides,
            joint_sorted: joint,
            joint_set,
        })
    }

    /// The bundled Paris directories schema.
    pub fn paris_directories() -> Self {
        Self::parse(PARIS_DIRECTORIES).expect("bundled schema is valid")
    }

    /// A schema with only level-1 types and no nesting.
    pub fn flat(names: &[&str]) -> Result<Self> {
        let types = names
            .iter()
            .map(|n| EntityType::new(n, &[Level::One]))
            .collect();
        Self::new(types, BTreeMap::new())
    }

    pub fn parse(doc: &str) -> Result<Self> {
        let doc: SchemaDoc =
            toml::from_str(doc).map_err(|e| Error::Schema(e.to_string().trim().to_string()))?;
        let mut types = Vec::with_capacity(doc.types.len());
        for (name, levels) in doc.types {
            let mut set = BTreeSet::new();
            for l in levels {
                set.insert(Level::try_from(l).map_err(Error::Schema)?);
            }
            types.push(EntityType { name, levels: set });
        }
        let mut containment = BTreeMap::new();
        for (parent, children) in doc.containment {
            let mut set = BTreeSet::new();
            for c in children {
                if !set.insert(c.clone()) {
                    return Err(Error::Schema(format!(
                        "`{c}` listed twice under `{parent}`"
                    )));
                }
            }
            containment.insert(parent, set);
        }
        let mut overrides = BTreeMap::new();
        for (k, v) in doc.flat_map {
            let j: JointLabel = k
                .parse()
                .map_err(|_| Error::Schema(format!("bad flat_map key `{k}`")))?;
            let target = if v == OUTSIDE { None } else { Some(v) };
            overrides.insert(j, target);
        }
        Self::with_flat_overrides(types, containment, overrides)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Canonical document form; `parse(to_document())` gives back an equal schema.
    pub fn to_document(&self) -> String {
        let mut out = String::from("[types]\n");
        let mut types: Vec<&EntityType> = self.types.iter().collect();
        types.sort_by(|a, b| a.name.cmp(&b.name));
        for t in types {
            let levels: Vec<String> = t.levels.iter().map(|l| l.to_string()).collect();
            out.push_str(&format!("{} = [{}]\n", t.name, levels.join(", ")));
        }
        out.push_str("\n[containment]\n");
        for (p, c) in &self.containment {
            let children: Vec<String> = c.iter().map(|x| format!("\"{x}\"")).collect();
            out.push_str(&format!("{} = [{}]\n", p, children.join(", ")));
        }
        if !self.flat_overrides.is_empty() {
            out.push_str("\n[flat_map]\n");
            for (j, f) in &self.flat_overrides {
                out.push_str(&format!("\"{}\" = \"{}\"\n", j, f.as_deref().unwrap_or(OUTSIDE)));
            }
        }
        out
    }

    /// Hex digest of the canonical document, stored in models and corpora.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_document().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn types(&self) -> &[EntityType] {
        &self.types
    }

    pub fn entity_type(&self, name: &str) -> Option<&EntityType> {
        self.types.iter().find(|t| t.name == name)
    }

    pub fn types_at(&self, level: Level) -> impl Iterator<Item = &EntityType> {
        self.types.iter().filter(move |t| t.allows(level))
    }

    pub fn containment(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.containment
    }

    pub fn is_nested(&self) -> bool {
        self.containment.values().any(|c| !c.is_empty())
    }

    /// Whether a level-2 `inner` may sit inside a level-1 `outer`.
    pub fn contains(&self, outer: &str, inner: &str) -> bool {
        self.containment
            .get(outer)
            .is_some_and(|c| c.contains(inner))
    }

    /// Authorized joint labels sorted by (level-1 name, level-2 name), `O` sorting as a name.
    pub fn joint_label_set(&self) -> &[JointLabel] {
        &self.joint_sorted
    }

    pub fn is_authorized(&self, joint: &JointLabel) -> bool {
        self.joint_set.contains(joint)
    }

    pub fn validate_joint(&self, joint: &JointLabel) -> Result<()> {
        if self.is_authorized(joint) {
            Ok(())
        } else {
            Err(Error::Unauthorized(joint.to_string()))
        }
    }

    /// Maps an authorized joint label to its flat type (`None` is `O`).
    pub fn flat_mapping(&self, joint: &JointLabel) -> Result<Option<String>> {
        self.validate_joint(joint)?;
        Ok(self.flat_type(joint))
    }

    /// Same as [`flat_mapping`](Self::flat_mapping) but total: labels outside the
    /// authorized set (which independent per-level models can produce) fall back
    /// to the deepest non-O rule.
    pub fn flat_type(&self, joint: &JointLabel) -> Option<String> {
        if let Some(o) = self.flat_overrides.get(joint) {
            return o.clone();
        }
        joint.inner.clone().or_else(|| joint.outer.clone())
    }

    /// Every flat type reachable through the mapping, sorted.
    pub fn flat_types(&self) -> Vec<String> {
        let set: BTreeSet<String> = self
            .joint_sorted
            .iter()
            .filter_map(|j| self.flat_type(j))
            .collect();
        set.into_iter().collect()
    }

    pub fn build_label_tree(&self, format: Format) -> LabelTree {
        LabelTree::from_schema(self, format)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub name: String,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// Longest downward path to a leaf; leaves have height 0.
    pub height: usize,
    /// Edges from the root; the root has depth 0.
    pub depth: usize,
    /// Leaf index in tag-vocabulary order, for leaves.
    pub leaf: Option<usize>,
    /// Leaf indices under this node, ascending.
    pub leaves: Vec<usize>,
}

/// Rooted label tree whose leaves are the tags a joint classifier can emit.
///
/// Under IO the path is `root -> level-1 class -> joint tag`; IOB2 inserts the
/// unprefixed joint label between the level-1 class and the prefixed tags.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTree {
    nodes: Vec<TreeNode>,
    leaf_nodes: Vec<NodeId>,
}

impl LabelTree {
    const ROOT: NodeId = NodeId(0);

    fn empty() -> Self {
        LabelTree {
            nodes: vec![TreeNode {
                name: "ROOT".to_string(),
                parent: None,
                children: Vec::new(),
                height: 0,
                depth: 0,
                leaf: None,
                leaves: Vec::new(),
            }],
            leaf_nodes: Vec::new(),
        }
    }

    fn add(&mut self, parent: NodeId, name: String) -> NodeId {
        let id = NodeId(self.nodes.len());
        let depth = self.nodes[parent.0].depth + 1;
        self.nodes.push(TreeNode {
            name,
            parent: Some(parent),
            children: Vec::new(),
            height: 0,
            depth,
            leaf: None,
            leaves: Vec::new(),
        });
        self.nodes[parent.0].children.push(id);
        id
    }

    fn add_leaf(&mut self, parent: NodeId, name: String) -> NodeId {
        let id = self.add(parent, name);
        self.nodes[id.0].leaf = Some(self.leaf_nodes.len());
        self.leaf_nodes.push(id);
        id
    }

    fn finish(mut self) -> Self {
        // Children always have larger ids than their parent.
        for i in (0..self.nodes.len()).rev() {
            if let Some(l) = self.nodes[i].leaf {
                self.nodes[i].leaves = vec![l];
            } else {
                let mut leaves = Vec::new();
                let mut height = 0;
                for c in self.nodes[i].children.clone() {
                    leaves.extend_from_slice(&self.nodes[c.0].leaves);
                    height = height.max(self.nodes[c.0].height + 1);
                }
                leaves.sort_unstable();
                self.nodes[i].leaves = leaves;
                self.nodes[i].height = height;
            }
        }
        self
    }

    /// Two-level tree: every leaf is a direct child of the root.
    pub fn flat<S: AsRef<str>>(leaf_names: &[S]) -> Self {
        let mut tree = Self::empty();
        for n in leaf_names {
            tree.add_leaf(Self::ROOT, n.as_ref().to_string());
        }
        tree.finish()
    }

    pub fn from_schema(schema: &LabelSchema, format: Format) -> Self {
        let mut tree = Self::empty();
        let mut outer_nodes: Vec<(String, NodeId)> = Vec::new();
        for joint in schema.joint_label_set() {
            let outer = joint.outer_name().to_string();
            let outer_node = match outer_nodes.iter().find(|(n, _)| *n == outer) {
                Some((_, id)) => *id,
                None => {
                    let id = tree.add(Self::ROOT, outer.clone());
                    outer_nodes.push((outer, id));
                    id
                }
            };
            let tags = tagcodec::joint_label_tags(joint, format);
            match format {
                Format::Io => {
                    for t in tags {
                        tree.add_leaf(outer_node, t);
                    }
                }
                Format::Iob2 => {
                    let joint_node = tree.add(outer_node, joint.to_string());
                    for t in tags {
                        tree.add_leaf(joint_node, t);
                    }
                }
            }
        }
        tree.finish()
    }

    pub fn root(&self) -> NodeId {
        Self::ROOT
    }

    pub fn node(&self, id: NodeId) -> Option<&TreeNode> {
        self.nodes.get(id.0)
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name).map(NodeId)
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_nodes.len()
    }

    pub fn leaf_node(&self, leaf: usize) -> Option<NodeId> {
        self.leaf_nodes.get(leaf).copied()
    }

    /// Leaf names in leaf-index order.
    pub fn leaf_names(&self) -> Vec<&str> {
        self.leaf_nodes
            .iter()
            .map(|id| self.nodes[id.0].name.as_str())
            .collect()
    }

    /// Node ids from the root down to `leaf`, both included.
    pub fn path_to_leaf(&self, leaf: usize) -> Option<Vec<NodeId>> {
        let mut cur = self.leaf_node(leaf)?;
        let mut path = vec![cur];
        while let Some(p) = self.nodes[cur.0].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        Some(path)
    }

    pub fn ancestors(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur.0].parent {
            out.push(p);
            cur = p;
        }
        out
    }

    pub fn lowest_common_ancestor(&self, a: NodeId, b: NodeId) -> NodeId {
        let up_a = self.ancestors(a);
        let up_b: HashSet<NodeId> = self.ancestors(b).into_iter().collect();
        *up_a
            .iter()
            .find(|n| up_b.contains(n))
            .unwrap_or(&Self::ROOT)
    }

    /// Number of edges on the path between two nodes.
    pub fn distance(&self, a: NodeId, b: NodeId) -> usize {
        let lca = self.lowest_common_ancestor(a, b);
        let d = self.nodes[lca.0].depth;
        self.nodes[a.0].depth + self.nodes[b.0].depth - 2 * d
    }

    pub fn leaf_distance(&self, a: usize, b: usize) -> Option<usize> {
        Some(self.distance(self.leaf_node(a)?, self.leaf_node(b)?))
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }
}
