//! Hierarchical intention tracking over an [`IntentionTree`].
//!
//! One tracking iteration:
//!
//! 1. bottom-level likelihoods from the behavior model,
//! 2. for each level bottom-up: aggregate child likelihoods into the level
//!    (weighted by the child conditional predictions), then predict and update
//!    the parent-conditioned posterior of every sibling group,
//! 3. top-down: chain conditionals into level marginals.
//!
//! Transitions stay inside a sibling group; moves between parents are carried
//! by the parent level's own filter.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{sequence_likelihood, BehaviorError, BehaviorParams, GoalSpec, Vector};
use crate::par;
use crate::tree::{
    marginals_from_conditionals, BeliefState, IntentionId, IntentionTree, NodeMap, TreeError,
    PROB_FLOOR,
};

/// Leaf count at which likelihood evaluation fans out to the thread pool.
const PAR_LEAVES: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error("intentions {0} and {1} are on different levels")]
    LevelMismatch(IntentionId, IntentionId),
    #[error("momentum probability {kappa} at level {level} is outside (0, 1]")]
    InvalidKappa { level: usize, kappa: f64 },
    #[error("need {expected} momentum probabilities, got {got}")]
    KappaCount { expected: usize, got: usize },
    #[error("no goal for leaf intention `{0}`")]
    MissingGoal(String),
    #[error("goal refers to non-leaf or duplicate intention {0}")]
    UnexpectedGoal(IntentionId),
    #[error("expected {expected} observations per horizon, got {got}")]
    HorizonLength { expected: usize, got: usize },
    #[error("empty observation horizon")]
    EmptyHorizon,
    #[error("non-finite likelihood for intention {0}")]
    NonFiniteLikelihood(IntentionId),
    #[error("probability mass of a sibling group at level {0} collapsed")]
    GroupUnderflow(usize),
    #[error("no level above {0}")]
    NoParentLevel(usize),
}

/// Per-level momentum probabilities `kappa`, index 0 for level 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionParams {
    kappa: Vec<f64>,
}

impl TransitionParams {
    pub fn new(kappa: Vec<f64>) -> Result<Self, FilterError> {
        for (i, &k) in kappa.iter().enumerate() {
            if !(k > 0.0 && k <= 1.0) {
                return Err(FilterError::InvalidKappa {
                    level: i + 1,
                    kappa: k,
                });
            }
        }
        Ok(Self { kappa })
    }

    pub fn uniform(depth: usize, kappa: f64) -> Result<Self, FilterError> {
        Self::new(vec![kappa; depth])
    }

    pub fn kappa(&self, level: usize) -> f64 {
        self.kappa[level - 1]
    }

    pub fn levels(&self) -> usize {
        self.kappa.len()
    }
}

/// `P(next | prev, Pa(prev))` for two intentions on one level.
pub fn transition_prob(
    tree: &IntentionTree,
    params: &TransitionParams,
    next: IntentionId,
    prev: IntentionId,
) -> Result<f64, FilterError> {
    let a = tree.node(next)?;
    let b = tree.node(prev)?;
    if a.level != b.level {
        return Err(FilterError::LevelMismatch(next, prev));
    }
    let m = tree.siblings(prev)?.len();
    let kappa = params.kappa(a.level);
    Ok(if next == prev {
        if m == 1 {
            1.0
        } else {
            kappa
        }
    } else if a.group == b.group {
        (1.0 - kappa) / (m - 1) as f64
    } else {
        0.0
    })
}

/// Parent-conditioned prediction for every sibling group on `level`.
///
/// Only entries at `level` are written; the rest of the returned map is zero.
pub fn conditional_predict(
    belief: &BeliefState,
    tree: &IntentionTree,
    params: &TransitionParams,
    level: usize,
) -> Result<NodeMap, FilterError> {
    tree.level(level)?;
    let kappa = params.kappa(level);
    let mut out = NodeMap::zeros(tree);
    for group in tree.groups_at(level) {
        let m = group.len();
        if m == 1 {
            out[group[0]] = belief.conditional[group[0]];
            continue;
        }
        let total: f64 = group.iter().map(|id| belief.conditional[*id]).sum();
        let leak = (1.0 - kappa) / (m - 1) as f64;
        for id in group {
            let own = belief.conditional[*id];
            out[*id] = kappa * own + leak * (total - own);
        }
    }
    Ok(out)
}

/// Bayes update of every sibling group on `level`, renormalized per group.
pub fn conditional_update(
    prediction: &NodeMap,
    likelihoods: &NodeMap,
    tree: &IntentionTree,
    level: usize,
) -> Result<NodeMap, FilterError> {
    tree.level(level)?;
    let mut out = NodeMap::zeros(tree);
    for group in tree.groups_at(level) {
        let mut total = 0.0;
        for id in group {
            let lik = likelihoods[*id];
            if !lik.is_finite() {
                return Err(FilterError::NonFiniteLikelihood(*id));
            }
            let v = (lik.max(PROB_FLOOR) * prediction[*id]).max(PROB_FLOOR);
            out[*id] = v;
            total += v;
        }
        if !(total.is_finite() && total > 0.0) {
            return Err(FilterError::GroupUnderflow(level));
        }
        for id in group {
            out[*id] /= total;
        }
    }
    Ok(out)
}

/// Level-`level + 1` likelihoods from level-`level` likelihoods, weighted by the
/// level-`level` conditional predictions. Writes into a copy of `likelihoods`.
pub fn upward_propagate(
    likelihoods: &NodeMap,
    prediction: &NodeMap,
    tree: &IntentionTree,
    level: usize,
) -> Result<NodeMap, FilterError> {
    if level >= tree.depth() {
        return Err(FilterError::NoParentLevel(level));
    }
    let mut out = likelihoods.clone();
    for parent in tree.level(level + 1)? {
        let children = tree.children(*parent)?;
        out[*parent] = children
            .iter()
            .map(|c| likelihoods[*c].max(PROB_FLOOR) * prediction[*c])
            .sum();
    }
    Ok(out)
}

/// Level marginals from per-group conditional posteriors.
pub fn downward_propagate(conditional: &NodeMap, tree: &IntentionTree) -> NodeMap {
    marginals_from_conditionals(tree, conditional)
}

/// Flat-tree reference filter: dense predict with the uniform-leak transition
/// matrix followed by a normalized Bayes update.
pub fn single_layer_step(prior: &[f64], likelihoods: &[f64], kappa: f64) -> Vec<f64> {
    let m = prior.len();
    let transition = |i: usize, j: usize| -> f64 {
        if i == j {
            if m == 1 {
                1.0
            } else {
                kappa
            }
        } else {
            (1.0 - kappa) / (m - 1) as f64
        }
    };
    let predicted: Vec<f64> = (0..m)
        .map(|i| (0..m).map(|j| transition(i, j) * prior[j]).sum())
        .collect();
    let unnorm: Vec<f64> = predicted
        .iter()
        .zip(likelihoods)
        .map(|(p, l)| (l.max(PROB_FLOOR) * p).max(PROB_FLOOR))
        .collect();
    let total: f64 = unnorm.iter().sum();
    unnorm.into_iter().map(|v| v / total).collect()
}

/// Likelihood of every tree level for one iteration, plus the predictions used.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodTable {
    pub likelihood: NodeMap,
    pub prediction: NodeMap,
}

/// One tracker instance: a tree, its belief and the model parameters.
#[derive(Debug, Clone)]
pub struct FilterSession {
    tree: Arc<IntentionTree>,
    belief: BeliefState,
    params: TransitionParams,
    behavior: BehaviorParams,
    frame: u64,
}

impl FilterSession {
    pub fn new(
        tree: Arc<IntentionTree>,
        params: TransitionParams,
        behavior: BehaviorParams,
    ) -> Result<Self, FilterError> {
        if params.levels() != tree.depth() {
            return Err(FilterError::KappaCount {
                expected: tree.depth(),
                got: params.levels(),
            });
        }
        Ok(Self {
            belief: BeliefState::uniform(&tree),
            tree,
            params,
            behavior,
            frame: 0,
        })
    }

    pub fn tree(&self) -> &IntentionTree {
        &self.tree
    }

    pub fn tree_arc(&self) -> &Arc<IntentionTree> {
        &self.tree
    }

    pub fn belief(&self) -> &BeliefState {
        &self.belief
    }

    pub fn params(&self) -> &TransitionParams {
        &self.params
    }

    pub fn behavior(&self) -> &BehaviorParams {
        &self.behavior
    }

    pub fn frame(&self) -> u64 {
        self.frame
    }

    /// Replaces the belief; conditionals are taken as given and marginals recomputed.
    pub fn set_conditionals(&mut self, conditional: NodeMap) {
        self.belief.marginal = marginals_from_conditionals(&self.tree, &conditional);
        self.belief.conditional = conditional;
    }

    /// Moves the session onto another tree of the same depth, keeping the frame counter.
    pub fn replace_tree(
        &mut self,
        tree: Arc<IntentionTree>,
        conditional: NodeMap,
    ) -> Result<(), FilterError> {
        if tree.depth() != self.params.levels() {
            return Err(FilterError::KappaCount {
                expected: tree.depth(),
                got: self.params.levels(),
            });
        }
        self.belief.marginal = marginals_from_conditionals(&tree, &conditional);
        self.belief.conditional = conditional;
        self.tree = tree;
        Ok(())
    }

    pub fn reset_level(&mut self, level: usize) -> Result<(), FilterError> {
        self.belief.reset_level(&self.tree, level)?;
        Ok(())
    }

    /// Full predict/update sweep given bottom-level likelihoods.
    pub fn sweep(&mut self, leaf_likelihoods: &NodeMap) -> Result<LikelihoodTable, FilterError> {
        let tree = &self.tree;
        let mut likelihood = NodeMap::zeros(tree);
        for id in tree.leaves() {
            let l = leaf_likelihoods[*id];
            if !l.is_finite() {
                return Err(FilterError::NonFiniteLikelihood(*id));
            }
            likelihood[*id] = l.max(PROB_FLOOR);
        }

        let mut prediction = NodeMap::zeros(tree);
        let mut conditional = NodeMap::zeros(tree);
        for level in 1..=tree.depth() {
            if level > 1 {
                likelihood = upward_propagate(&likelihood, &prediction, tree, level - 1)?;
            }
            let pred = conditional_predict(&self.belief, tree, &self.params, level)?;
            let post = conditional_update(&pred, &likelihood, tree, level)?;
            for id in tree.level(level)? {
                prediction[*id] = pred[*id];
                conditional[*id] = post[*id];
            }
        }

        self.belief.marginal = downward_propagate(&conditional, tree);
        self.belief.conditional = conditional;
        self.frame += self.behavior.horizon as u64;
        self.belief.time = self.frame;
        Ok(LikelihoodTable {
            likelihood,
            prediction,
        })
    }

    /// Bottom-level likelihoods for one horizon, one per leaf.
    ///
    /// `goals` must already be resolved (dynamic goals moved onto the current
    /// end-effector) and cover every leaf exactly once.
    pub fn leaf_likelihoods(
        &self,
        start: &Vector,
        observations: &[Vector],
        goals: &[GoalSpec],
        speed: f64,
    ) -> Result<NodeMap, FilterError> {
        if observations.is_empty() {
            return Err(FilterError::EmptyHorizon);
        }
        if observations.len() != self.behavior.horizon {
            return Err(FilterError::HorizonLength {
                expected: self.behavior.horizon,
                got: observations.len(),
            });
        }
        let tree = &self.tree;
        let mut seen = vec![false; tree.len()];
        for g in goals {
            let node = tree.node(g.intention)?;
            if node.level != 1 || seen[g.intention.0] {
                return Err(FilterError::UnexpectedGoal(g.intention));
            }
            seen[g.intention.0] = true;
        }
        if let Some(missing) = tree.leaves().iter().find(|id| !seen[id.0]) {
            return Err(FilterError::MissingGoal(tree.label(*missing).to_owned()));
        }

        let values = par::map_min_len(goals, PAR_LEAVES, |g| {
            sequence_likelihood(start, observations, g, speed, &self.behavior)
        });
        let mut out = NodeMap::zeros(tree);
        for (g, v) in goals.iter().zip(values) {
            out[g.intention] = v?;
        }
        Ok(out)
    }

    /// One tracking iteration over a horizon of observations.
    pub fn step(
        &mut self,
        start: &Vector,
        observations: &[Vector],
        goals: &[GoalSpec],
        speed: f64,
    ) -> Result<&BeliefState, FilterError> {
        let leaves = self.leaf_likelihoods(start, observations, goals, speed)?;
        self.sweep(&leaves)?;
        Ok(&self.belief)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::NodeSpec;
    use approx::assert_abs_diff_eq;

    fn example_tree() -> Arc<IntentionTree> {
        Arc::new(
            IntentionTree::build(&[
                NodeSpec::new("I", 2, None),
                NodeSpec::new("II", 2, None),
                NodeSpec::new("A", 1, Some("I")),
                NodeSpec::new("B", 1, Some("I")),
                NodeSpec::new("C", 1, Some("II")),
                NodeSpec::new("D", 1, Some("II")),
                NodeSpec::new("E", 1, Some("II")),
            ])
            .unwrap(),
        )
    }

    #[test]
    fn transition_cases() {
        let tree = example_tree();
        let p = TransitionParams::uniform(2, 0.99).unwrap();
        let id = |l: &str| tree.id(l).unwrap();
        assert_abs_diff_eq!(
            transition_prob(&tree, &p, id("D"), id("C")).unwrap(),
            0.005,
            epsilon = 1e-15
        );
        assert_eq!(transition_prob(&tree, &p, id("C"), id("C")).unwrap(), 0.99);
        assert_eq!(transition_prob(&tree, &p, id("A"), id("C")).unwrap(), 0.0);
        assert!(matches!(
            transition_prob(&tree, &p, id("A"), id("I")),
            Err(FilterError::LevelMismatch(..))
        ));
    }

    #[test]
    fn single_member_group_keeps_mass() {
        let tree = IntentionTree::build(&[
            NodeSpec::new("coop", 2, None),
            NodeSpec::new("fr", 1, Some("coop")),
        ])
        .unwrap();
        let p = TransitionParams::uniform(2, 0.9).unwrap();
        assert_eq!(
            transition_prob(&tree, &p, IntentionId(1), IntentionId(1)).unwrap(),
            1.0
        );
    }

    #[test]
    fn kappa_validation() {
        assert!(TransitionParams::new(vec![0.0]).is_err());
        assert!(TransitionParams::new(vec![1.2]).is_err());
        assert!(TransitionParams::new(vec![1.0, 0.5]).is_ok());
    }

    #[test]
    fn predict_from_uniform_and_delta() {
        let tree = example_tree();
        let p = TransitionParams::uniform(2, 0.99).unwrap();
        let mut belief = BeliefState::uniform(&tree);
        let pred = conditional_predict(&belief, &tree, &p, 1).unwrap();
        let id = |l: &str| tree.id(l).unwrap();
        for l in ["C", "D", "E"] {
            assert_abs_diff_eq!(pred[id(l)], 1.0 / 3.0, epsilon = 1e-15);
        }

        belief.conditional[id("C")] = 1.0;
        belief.conditional[id("D")] = 0.0;
        belief.conditional[id("E")] = 0.0;
        let pred = conditional_predict(&belief, &tree, &p, 1).unwrap();
        assert_abs_diff_eq!(pred[id("C")], 0.99, epsilon = 1e-15);
        assert_abs_diff_eq!(pred[id("D")], 0.005, epsilon = 1e-15);
        assert_abs_diff_eq!(pred[id("E")], 0.005, epsilon = 1e-15);
    }

    #[test]
    fn update_cases() {
        let tree = example_tree();
        let id = |l: &str| tree.id(l).unwrap();
        let mut pred = NodeMap::zeros(&tree);
        for l in ["C", "D", "E"] {
            pred[id(l)] = 1.0 / 3.0;
        }
        pred[id("A")] = 0.3;
        pred[id("B")] = 0.7;
        let flat = NodeMap::filled(&tree, 2.5);
        let post = conditional_update(&pred, &flat, &tree, 1).unwrap();
        assert_abs_diff_eq!(post[id("A")], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(post[id("B")], 0.7, epsilon = 1e-15);

        let mut lik = NodeMap::filled(&tree, 1.0);
        lik[id("C")] = 2.0;
        let post = conditional_update(&pred, &lik, &tree, 1).unwrap();
        assert_abs_diff_eq!(post[id("C")], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(post[id("D")], 0.25, epsilon = 1e-15);

        lik[id("D")] = f64::NAN;
        assert!(matches!(
            conditional_update(&pred, &lik, &tree, 1),
            Err(FilterError::NonFiniteLikelihood(_))
        ));
    }

    #[test]
    fn upward_cases() {
        let tree = example_tree();
        let id = |l: &str| tree.id(l).unwrap();
        let mut lik = NodeMap::zeros(&tree);
        let mut pred = NodeMap::zeros(&tree);
        for (l, v) in [("A", 1.0), ("B", 3.0), ("C", 2.0), ("D", 4.0), ("E", 6.0)] {
            lik[id(l)] = v;
        }
        for l in ["A", "B"] {
            pred[id(l)] = 0.5;
        }
        for l in ["C", "D", "E"] {
            pred[id(l)] = 1.0 / 3.0;
        }
        let up = upward_propagate(&lik, &pred, &tree, 1).unwrap();
        assert_abs_diff_eq!(up[id("I")], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(up[id("II")], 4.0, epsilon = 1e-14);
        assert!(matches!(
            upward_propagate(&lik, &pred, &tree, 2),
            Err(FilterError::NoParentLevel(2))
        ));

        let chain = IntentionTree::build(&[
            NodeSpec::new("p", 2, None),
            NodeSpec::new("c", 1, Some("p")),
        ])
        .unwrap();
        let mut l = NodeMap::zeros(&chain);
        l[IntentionId(1)] = 0.37;
        let mut pr = NodeMap::zeros(&chain);
        pr[IntentionId(1)] = 1.0;
        assert_eq!(
            upward_propagate(&l, &pr, &chain, 1).unwrap()[IntentionId(0)],
            0.37
        );
    }

    #[test]
    fn downward_product() {
        let tree = example_tree();
        let id = |l: &str| tree.id(l).unwrap();
        let mut cond = BeliefState::uniform(&tree).conditional;
        cond[id("I")] = 0.6;
        cond[id("II")] = 0.4;
        cond[id("C")] = 0.5;
        cond[id("D")] = 0.25;
        cond[id("E")] = 0.25;
        let m = downward_propagate(&cond, &tree);
        assert_abs_diff_eq!(m[id("C")], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(m[id("A")], 0.3, epsilon = 1e-15);
    }

    #[test]
    fn single_layer_examples() {
        let post = single_layer_step(&[0.5, 0.5], &[3.0, 1.0], 0.99);
        assert_abs_diff_eq!(post[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(post[1], 0.25, epsilon = 1e-15);

        let frozen = single_layer_step(&[0.0, 1.0, 0.0], &[1.0, 1.0, 1.0], 1.0);
        assert_abs_diff_eq!(frozen[1], 1.0, epsilon = 1e-15);
        assert!(frozen[0] < 1e-299);
    }

    #[test]
    fn step_rejects_bad_horizons_and_goals() {
        let tree = example_tree();
        let mut s = FilterSession::new(
            tree.clone(),
            TransitionParams::uniform(2, 0.99).unwrap(),
            BehaviorParams::default(),
        )
        .unwrap();
        let start = Vector::from_column_slice(&[0.0, 0.0]);
        let goals: Vec<GoalSpec> = tree
            .leaves()
            .iter()
            .enumerate()
            .map(|(i, id)| GoalSpec::fixed(*id, Vector::from_column_slice(&[i as f64, 1.0]), 0.05))
            .collect();
        assert_eq!(
            s.step(&start, &[], &goals, 0.1).unwrap_err(),
            FilterError::EmptyHorizon
        );
        let obs = [start.clone()];
        assert!(matches!(
            s.step(&start, &obs, &goals[1..], 0.1),
            Err(FilterError::MissingGoal(_))
        ));
        let before = s.frame();
        s.step(&start, &obs, &goals, 0.1).unwrap();
        assert_eq!(s.frame(), before + 1);
        assert!(s.belief().normalization_error(&tree) < 1e-12);
    }
}
