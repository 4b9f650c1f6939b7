//! Intention hierarchy and the belief storage the filter operates on.
//!
//! A tree is built from a flat list of `(label, level, parent)` entries. Level 1
//! holds the most concrete intentions (the leaves); the top level `L` holds the
//! parentless intentions, which together form one implicit sibling group.
//! Every other sibling group is the ordered child list of a parent.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probabilities below this value are floored before renormalizing.
pub const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IntentionId(pub usize);

impl IntentionId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for IntentionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// One entry of a tree description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub label: String,
    pub level: usize,
    #[serde(default)]
    pub parent: Option<String>,
}

impl NodeSpec {
    pub fn new(label: &str, level: usize, parent: Option<&str>) -> Self {
        Self {
            label: label.to_owned(),
            level,
            parent: parent.map(str::to_owned),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IntentionNode {
    pub id: IntentionId,
    pub label: String,
    pub level: usize,
    pub parent: Option<IntentionId>,
    pub children: Vec<IntentionId>,
    /// Index of the sibling group this node belongs to.
    pub group: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("tree specification is empty")]
    Empty,
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("node `{label}` has invalid level {level}; levels start at 1")]
    InvalidLevel { label: String, level: usize },
    #[error("node `{label}` references unknown parent `{parent}`")]
    UnknownParent { label: String, parent: String },
    #[error("cycle detected through node `{0}`")]
    Cycle(String),
    #[error("level mismatch at `{label}`: level {level} under parent `{parent}` at level {parent_level}")]
    LevelMismatch {
        label: String,
        level: usize,
        parent: String,
        parent_level: usize,
    },
    #[error("node `{label}` at level {level} has a parent but the top level is {depth}")]
    ParentOnTopLevel {
        label: String,
        level: usize,
        depth: usize,
    },
    #[error("orphan node `{label}` at level {level} below the top level {depth}")]
    Orphan {
        label: String,
        level: usize,
        depth: usize,
    },
    #[error("node `{0}` above level 1 has no children")]
    Childless(String),
    #[error("unknown intention {0}")]
    UnknownId(IntentionId),
    #[error("unknown intention label `{0}`")]
    UnknownLabel(String),
    #[error("level {level} out of range 1..={depth}")]
    LevelOutOfRange { level: usize, depth: usize },
}

/// Immutable, validated intention hierarchy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IntentionTree {
    nodes: Vec<IntentionNode>,
    depth: usize,
    /// Node ids per level, `levels[l - 1]` for level `l`, in declaration order.
    levels: Vec<Vec<IntentionId>>,
    /// Sibling groups in declaration order. Group 0 is the top level.
    groups: Vec<Vec<IntentionId>>,
    #[serde(skip)]
    by_label: HashMap<String, IntentionId>,
}

impl IntentionTree {
    /// Validates `spec` and assigns ids in declaration order.
    pub fn build(spec: &[NodeSpec]) -> Result<Self, TreeError> {
        if spec.is_empty() {
            return Err(TreeError::Empty);
        }

        let mut by_label = HashMap::with_capacity(spec.len());
        for (i, entry) in spec.iter().enumerate() {
            if entry.level == 0 {
                return Err(TreeError::InvalidLevel {
                    label: entry.label.clone(),
                    level: entry.level,
                });
            }
            if by_label
                .insert(entry.label.clone(), IntentionId(i))
                .is_some()
            {
                return Err(TreeError::DuplicateLabel(entry.label.clone()));
            }
        }

        let mut parents = Vec::with_capacity(spec.len());
        for entry in spec {
            let parent = match &entry.parent {
                Some(p) => Some(*by_label.get(p).ok_or_else(|| TreeError::UnknownParent {
                    label: entry.label.clone(),
                    parent: p.clone(),
                })?),
                None => None,
            };
            parents.push(parent);
        }

        // Parent chains must terminate; a chain longer than the node count loops.
        for (i, entry) in spec.iter().enumerate() {
            let mut cursor = parents[i];
            let mut steps = 0;
            while let Some(p) = cursor {
                steps += 1;
                if p.0 == i || steps > spec.len() {
                    return Err(TreeError::Cycle(entry.label.clone()));
                }
                cursor = parents[p.0];
            }
        }

        let depth = spec.iter().map(|e| e.level).max().unwrap_or(1);
        for (i, entry) in spec.iter().enumerate() {
            match parents[i] {
                Some(p) => {
                    if entry.level == depth {
                        return Err(TreeError::ParentOnTopLevel {
                            label: entry.label.clone(),
                            level: entry.level,
                            depth,
                        });
                    }
                    let parent_level = spec[p.0].level;
                    if parent_level != entry.level + 1 {
                        return Err(TreeError::LevelMismatch {
                            label: entry.label.clone(),
                            level: entry.level,
                            parent: spec[p.0].label.clone(),
                            parent_level,
                        });
                    }
                }
                None if entry.level != depth => {
                    return Err(TreeError::Orphan {
                        label: entry.label.clone(),
                        level: entry.level,
                        depth,
                    });
                }
                None => {}
            }
        }

        let mut nodes: Vec<IntentionNode> = spec
            .iter()
            .enumerate()
            .map(|(i, entry)| IntentionNode {
                id: IntentionId(i),
                label: entry.label.clone(),
                level: entry.level,
                parent: parents[i],
                children: Vec::new(),
                group: 0,
            })
            .collect();
        for i in 0..nodes.len() {
            if let Some(p) = nodes[i].parent {
                nodes[p.0].children.push(IntentionId(i));
            }
        }
        if let Some(n) = nodes.iter().find(|n| n.level > 1 && n.children.is_empty()) {
            return Err(TreeError::Childless(n.label.clone()));
        }

        let mut levels = vec![Vec::new(); depth];
        for n in &nodes {
            levels[n.level - 1].push(n.id);
        }

        let mut groups = vec![levels[depth - 1].clone()];
        // Child groups ordered by parent declaration order.
        for n in &nodes {
            if !n.children.is_empty() {
                groups.push(n.children.clone());
            }
        }
        for (g, members) in groups.iter().enumerate() {
            for id in members {
                nodes[id.0].group = g;
            }
        }

        Ok(Self {
            nodes,
            depth,
            levels,
            groups,
            by_label,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of levels `L`.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn nodes(&self) -> &[IntentionNode] {
        &self.nodes
    }

    pub fn node(&self, id: IntentionId) -> Result<&IntentionNode, TreeError> {
        self.nodes.get(id.0).ok_or(TreeError::UnknownId(id))
    }

    pub fn label(&self, id: IntentionId) -> &str {
        &self.nodes[id.0].label
    }

    pub fn id(&self, label: &str) -> Result<IntentionId, TreeError> {
        self.by_label
            .get(label)
            .copied()
            .ok_or_else(|| TreeError::UnknownLabel(label.to_owned()))
    }

    /// Ids at `level` in declaration order.
    pub fn level(&self, level: usize) -> Result<&[IntentionId], TreeError> {
        if level == 0 || level > self.depth {
            return Err(TreeError::LevelOutOfRange {
                level,
                depth: self.depth,
            });
        }
        Ok(&self.levels[level - 1])
    }

    pub fn leaves(&self) -> &[IntentionId] {
        &self.levels[0]
    }

    pub fn top(&self) -> &[IntentionId] {
        &self.levels[self.depth - 1]
    }

    pub fn groups(&self) -> &[Vec<IntentionId>] {
        &self.groups
    }

    /// Sibling groups whose members sit at `level`.
    pub fn groups_at(&self, level: usize) -> impl Iterator<Item = &[IntentionId]> {
        self.groups
            .iter()
            .filter(move |g| self.nodes[g[0].0].level == level)
            .map(Vec::as_slice)
    }

    /// The sibling group containing `id`, including `id` itself.
    pub fn siblings(&self, id: IntentionId) -> Result<&[IntentionId], TreeError> {
        let node = self.node(id)?;
        Ok(&self.groups[node.group])
    }

    pub fn children(&self, id: IntentionId) -> Result<&[IntentionId], TreeError> {
        Ok(&self.node(id)?.children)
    }

    pub fn parent(&self, id: IntentionId) -> Result<Option<IntentionId>, TreeError> {
        Ok(self.node(id)?.parent)
    }

    /// Ancestors of `id` from its parent up to the top level.
    pub fn ancestors(&self, id: IntentionId) -> impl Iterator<Item = IntentionId> + '_ {
        std::iter::successors(self.nodes[id.0].parent, move |p| self.nodes[p.0].parent)
    }
}

/// Dense per-node values (probabilities or likelihoods) indexed by [`IntentionId`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMap(pub Vec<f64>);

impl NodeMap {
    pub fn zeros(tree: &IntentionTree) -> Self {
        Self(vec![0.0; tree.len()])
    }

    pub fn filled(tree: &IntentionTree, value: f64) -> Self {
        Self(vec![value; tree.len()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Values of the given ids, in order.
    pub fn select(&self, ids: &[IntentionId]) -> Vec<f64> {
        ids.iter().map(|id| self.0[id.0]).collect()
    }
}

impl Index<IntentionId> for NodeMap {
    type Output = f64;

    fn index(&self, id: IntentionId) -> &f64 {
        &self.0[id.0]
    }
}

impl IndexMut<IntentionId> for NodeMap {
    fn index_mut(&mut self, id: IntentionId) -> &mut f64 {
        &mut self.0[id.0]
    }
}

/// Conditional and marginal posteriors over every node of one tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    /// `P(g | x, Pa(g))`; for top-level nodes this is the plain posterior.
    pub conditional: NodeMap,
    /// `P(g | x)`.
    pub marginal: NodeMap,
    /// Frame index of the last update.
    pub time: u64,
}

impl BeliefState {
    /// Uniform `1/m` over every sibling group, marginals by downward products.
    pub fn uniform(tree: &IntentionTree) -> Self {
        let mut conditional = NodeMap::zeros(tree);
        for group in tree.groups() {
            let p = 1.0 / group.len() as f64;
            for id in group {
                conditional[*id] = p;
            }
        }
        let marginal = marginals_from_conditionals(tree, &conditional);
        Self {
            conditional,
            marginal,
            time: 0,
        }
    }

    /// Restarts one level to uniform conditionals and recomputes marginals.
    pub fn reset_level(&mut self, tree: &IntentionTree, level: usize) -> Result<(), TreeError> {
        tree.level(level)?;
        for group in tree.groups_at(level) {
            let p = 1.0 / group.len() as f64;
            for id in group {
                self.conditional[*id] = p;
            }
        }
        self.marginal = marginals_from_conditionals(tree, &self.conditional);
        Ok(())
    }

    /// Largest deviation from unit mass over all sibling groups (conditionals)
    /// and all levels (marginals).
    pub fn normalization_error(&self, tree: &IntentionTree) -> f64 {
        let group_err = tree
            .groups()
            .iter()
            .map(|g| (g.iter().map(|id| self.conditional[*id]).sum::<f64>() - 1.0).abs());
        let level_err = (1..=tree.depth()).map(|l| {
            let ids = tree.level(l).expect("level in range");
            (ids.iter().map(|id| self.marginal[*id]).sum::<f64>() - 1.0).abs()
        });
        group_err.chain(level_err).fold(0.0, f64::max)
    }
}

/// Alias for [`BeliefState::uniform`].
pub fn init_belief(tree: &IntentionTree) -> BeliefState {
    BeliefState::uniform(tree)
}

/// Chains conditionals top-down: `marginal(g) = conditional(g) * marginal(Pa(g))`.
pub fn marginals_from_conditionals(tree: &IntentionTree, conditional: &NodeMap) -> NodeMap {
    let mut marginal = NodeMap::zeros(tree);
    for level in (1..=tree.depth()).rev() {
        for id in tree.level(level).expect("level in range") {
            let parent_mass = match tree.nodes()[id.0].parent {
                Some(p) => marginal[p],
                None => 1.0,
            };
            marginal[*id] = conditional[*id] * parent_mass;
        }
    }
    marginal
}

/// Marginal posteriors of the nodes at `level`, in declaration order.
pub fn marginal_at_level(
    belief: &BeliefState,
    tree: &IntentionTree,
    level: usize,
) -> Result<Vec<(IntentionId, f64)>, TreeError> {
    Ok(tree
        .level(level)?
        .iter()
        .map(|id| (*id, belief.marginal[*id]))
        .collect())
}

/// Index of the largest value; ties go to the earliest entry.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.iter().copied().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn example_tree() -> IntentionTree {
        IntentionTree::build(&[
            NodeSpec::new("I", 2, None),
            NodeSpec::new("II", 2, None),
            NodeSpec::new("A", 1, Some("I")),
            NodeSpec::new("B", 1, Some("I")),
            NodeSpec::new("C", 1, Some("II")),
            NodeSpec::new("D", 1, Some("II")),
            NodeSpec::new("E", 1, Some("II")),
        ])
        .unwrap()
    }

    fn labels(tree: &IntentionTree, ids: &[IntentionId]) -> Vec<String> {
        ids.iter().map(|id| tree.label(*id).to_owned()).collect()
    }

    #[test]
    fn builds_example_hierarchy() {
        let tree = example_tree();
        assert_eq!(tree.depth(), 2);
        let groups: Vec<Vec<String>> = tree.groups().iter().map(|g| labels(&tree, g)).collect();
        assert_eq!(
            groups,
            vec![vec!["I", "II"], vec!["A", "B"], vec!["C", "D", "E"]]
        );
    }

    #[test]
    fn single_node_tree() {
        let tree = IntentionTree::build(&[NodeSpec::new("only", 1, None)]).unwrap();
        assert_eq!(tree.depth(), 1);
        assert_eq!(tree.groups().len(), 1);
        let belief = init_belief(&tree);
        assert_eq!(belief.marginal.0, vec![1.0]);
    }

    #[test]
    fn rejects_level_mismatch() {
        let err = IntentionTree::build(&[
            NodeSpec::new("top", 4, None),
            NodeSpec::new("p", 3, Some("top")),
            NodeSpec::new("c", 3, Some("p")),
        ])
        .unwrap_err();
        assert!(matches!(err, TreeError::LevelMismatch { .. }), "{err}");
    }

    #[test]
    fn rejects_structural_errors() {
        let dup = IntentionTree::build(&[NodeSpec::new("a", 1, None), NodeSpec::new("a", 1, None)]);
        assert!(matches!(dup, Err(TreeError::DuplicateLabel(_))));

        let orphan = IntentionTree::build(&[
            NodeSpec::new("t", 2, None),
            NodeSpec::new("a", 1, Some("t")),
            NodeSpec::new("b", 1, None),
        ]);
        assert!(matches!(orphan, Err(TreeError::Orphan { .. })));

        let cycle = IntentionTree::build(&[
            NodeSpec::new("a", 1, Some("b")),
            NodeSpec::new("b", 2, Some("a")),
        ]);
        assert!(matches!(cycle, Err(TreeError::Cycle(_))));

        let unknown = IntentionTree::build(&[NodeSpec::new("a", 1, Some("zz"))]);
        assert!(matches!(unknown, Err(TreeError::UnknownParent { .. })));

        let childless = IntentionTree::build(&[
            NodeSpec::new("t", 2, None),
            NodeSpec::new("u", 2, None),
            NodeSpec::new("a", 1, Some("t")),
        ]);
        assert!(matches!(childless, Err(TreeError::Childless(_))));

        assert!(matches!(IntentionTree::build(&[]), Err(TreeError::Empty)));
    }

    #[test]
    fn forward_parent_references_resolve() {
        let tree = IntentionTree::build(&[
            NodeSpec::new("leaf", 1, Some("root")),
            NodeSpec::new("root", 2, None),
        ])
        .unwrap();
        assert_eq!(tree.parent(IntentionId(0)).unwrap(), Some(IntentionId(1)));
    }

    #[test]
    fn uniform_init_matches_products() {
        let tree = example_tree();
        let b = init_belief(&tree);
        let id = |l: &str| tree.id(l).unwrap();
        assert_abs_diff_eq!(b.conditional[id("I")], 0.5);
        assert_abs_diff_eq!(b.conditional[id("A")], 0.5);
        assert_abs_diff_eq!(b.conditional[id("C")], 1.0 / 3.0);
        assert_abs_diff_eq!(b.marginal[id("A")], 0.25);
        assert_abs_diff_eq!(b.marginal[id("E")], 1.0 / 6.0, epsilon = 1e-15);

        let level1 = marginal_at_level(&b, &tree, 1).unwrap();
        let probs: Vec<f64> = level1.iter().map(|(_, p)| *p).collect();
        assert_eq!(probs.len(), 5);
        assert_abs_diff_eq!(probs.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let level2 = marginal_at_level(&b, &tree, 2).unwrap();
        assert_eq!(
            level2.iter().map(|(_, p)| *p).collect::<Vec<_>>(),
            vec![0.5, 0.5]
        );
        assert!(matches!(
            marginal_at_level(&b, &tree, 3),
            Err(TreeError::LevelOutOfRange { .. })
        ));
    }

    #[test]
    fn five_way_sibling_group() {
        let tree = IntentionTree::build(&[
            NodeSpec::new("root", 2, None),
            NodeSpec::new("0", 1, Some("root")),
            NodeSpec::new("1", 1, Some("root")),
            NodeSpec::new("2", 1, Some("root")),
            NodeSpec::new("3", 1, Some("root")),
            NodeSpec::new("prep", 1, Some("root")),
        ])
        .unwrap();
        let b = init_belief(&tree);
        for id in tree.leaves() {
            assert_abs_diff_eq!(b.conditional[*id], 0.2);
        }
    }

    #[test]
    fn structural_lookups() {
        let tree = example_tree();
        let id = |l: &str| tree.id(l).unwrap();
        assert_eq!(
            labels(&tree, tree.siblings(id("C")).unwrap()),
            vec!["C", "D", "E"]
        );
        assert_eq!(tree.parent(id("I")).unwrap(), None);
        assert!(tree.children(id("A")).unwrap().is_empty());
        assert_eq!(
            labels(&tree, tree.children(id("II")).unwrap()),
            vec!["C", "D", "E"]
        );
        assert!(matches!(
            tree.siblings(IntentionId(99)),
            Err(TreeError::UnknownId(_))
        ));
    }

    #[test]
    fn build_is_deterministic() {
        let a = example_tree();
        let b = example_tree();
        assert_eq!(a, b);
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), Some(1));
        assert_eq!(argmax(&[]), None);
    }
}
