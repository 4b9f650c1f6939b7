//! Shared test oracles: random trees, a naive hierarchical evaluator and a
//! dense single-layer filter, all written without the library's filter code.

#![allow(dead_code)]

use std::sync::Arc;

use hit_core::behavior::BehaviorParams;
use hit_core::filter::{FilterSession, TransitionParams};
use hit_core::tree::{IntentionTree, NodeMap, NodeSpec};
use rand::Rng;

pub const FLOOR: f64 = 1e-300;

/// Plain description of a tree: per node its level and parent index.
#[derive(Debug, Clone)]
pub struct PlainTree {
    pub level: Vec<usize>,
    pub parent: Vec<Option<usize>>,
    pub depth: usize,
}

impl PlainTree {
    pub fn len(&self) -> usize {
        self.level.len()
    }

    pub fn label(i: usize) -> String {
        format!("n{i}")
    }

    pub fn specs(&self) -> Vec<NodeSpec> {
        (0..self.len())
            .map(|i| NodeSpec {
                label: Self::label(i),
                level: self.level[i],
                parent: self.parent[i].map(Self::label),
            })
            .collect()
    }

    pub fn build(&self) -> Arc<IntentionTree> {
        Arc::new(IntentionTree::build(&self.specs()).expect("generated tree is valid"))
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.level[i] == 1).collect()
    }

    /// Nodes sharing `i`'s level and parent, `i` included.
    pub fn siblings(&self, i: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&j| self.level[j] == self.level[i] && self.parent[j] == self.parent[i])
            .collect()
    }

    pub fn uniform(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| 1.0 / self.siblings(i).len() as f64)
            .collect()
    }
}

/// Random tree of depth `1..=3` with at most `max_leaves` leaves, every leaf at level 1.
pub fn random_tree<R: Rng>(rng: &mut R, max_leaves: usize) -> PlainTree {
    let depth = rng.random_range(1..=3usize);
    let mut level = Vec::new();
    let mut parent = Vec::new();
    let roots = if depth == 1 {
        rng.random_range(1..=max_leaves)
    } else {
        rng.random_range(1..=4usize)
    };
    let mut frontier: Vec<usize> = Vec::new();
    for _ in 0..roots {
        frontier.push(level.len());
        level.push(depth);
        parent.push(None);
    }
    for l in (1..depth).rev() {
        let mut next = Vec::new();
        let remaining_parents = frontier.len();
        for (k, &p) in frontier.iter().enumerate() {
            // Leave at least one leaf for every parent still to be filled.
            let budget = if l == 1 {
                let used = next.len();
                max_leaves - used - (remaining_parents - k - 1)
            } else {
                4
            };
            let n = rng.random_range(1..=budget.clamp(1, 4));
            for _ in 0..n {
                next.push(level.len());
                level.push(l);
                parent.push(Some(p));
            }
        }
        frontier = next;
    }
    PlainTree {
        level,
        parent,
        depth,
    }
}

/// Transition probability from `prev` to `next` on one level.
fn transition(tree: &PlainTree, next: usize, prev: usize, kappa: f64) -> f64 {
    let m = tree.siblings(prev).len();
    if next == prev {
        if m == 1 {
            1.0
        } else {
            kappa
        }
    } else if tree.parent[next] == tree.parent[prev] {
        (1.0 - kappa) / (m - 1) as f64
    } else {
        0.0
    }
}

/// Naive hierarchical step: explicit double loops over each level.
/// Returns (conditionals, marginals) indexed like `tree`.
pub fn naive_step(
    tree: &PlainTree,
    cond: &[f64],
    leaf_lik: &[f64],
    kappa: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = tree.len();
    let mut lik = vec![0.0; n];
    let mut pred = vec![0.0; n];
    let mut post = vec![0.0; n];
    for l in 1..=tree.depth {
        let nodes: Vec<usize> = (0..n).filter(|&i| tree.level[i] == l).collect();
        for &i in &nodes {
            lik[i] = if l == 1 {
                leaf_lik[i].max(FLOOR)
            } else {
                (0..n)
                    .filter(|&c| tree.parent[c] == Some(i))
                    .map(|c| lik[c].max(FLOOR) * pred[c])
                    .sum()
            };
        }
        for &i in &nodes {
            pred[i] = nodes
                .iter()
                .map(|&j| transition(tree, i, j, kappa[l - 1]) * cond[j])
                .sum();
        }
        for &i in &nodes {
            post[i] = (lik[i] * pred[i]).max(FLOOR);
        }
        for &i in &nodes {
            let total: f64 = tree
                .siblings(i)
                .iter()
                .map(|&j| (lik[j] * pred[j]).max(FLOOR))
                .sum();
            post[i] /= total;
        }
    }
    let mut marg = vec![0.0; n];
    for l in (1..=tree.depth).rev() {
        for i in (0..n).filter(|&i| tree.level[i] == l) {
            marg[i] = post[i] * tree.parent[i].map_or(1.0, |p| marg[p]);
        }
    }
    (post, marg)
}

/// Dense single-layer filter: full transition matrix times prior, then Bayes.
pub fn dense_hmm_step(prior: &[f64], lik: &[f64], kappa: f64) -> Vec<f64> {
    let m = prior.len();
    let mut t = vec![vec![0.0; m]; m];
    for (i, row) in t.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = match (i == j, m) {
                (true, 1) => 1.0,
                (true, _) => kappa,
                (false, _) => (1.0 - kappa) / (m - 1) as f64,
            };
        }
    }
    let pred: Vec<f64> = (0..m)
        .map(|i| (0..m).map(|j| t[i][j] * prior[j]).sum())
        .collect();
    let un: Vec<f64> = (0..m)
        .map(|i| (lik[i].max(FLOOR) * pred[i]).max(FLOOR))
        .collect();
    let z: f64 = un.iter().sum();
    un.into_iter().map(|v| v / z).collect()
}

pub fn session(tree: &Arc<IntentionTree>, kappa: &[f64]) -> FilterSession {
    FilterSession::new(
        tree.clone(),
        TransitionParams::new(kappa.to_vec()).unwrap(),
        BehaviorParams::default(),
    )
    .unwrap()
}

/// Leaf likelihoods in library layout from a plain per-node vector.
pub fn node_map(tree: &IntentionTree, values: &[f64]) -> NodeMap {
    let mut m = NodeMap::zeros(tree);
    for (i, v) in values.iter().enumerate() {
        m[tree.id(&PlainTree::label(i)).unwrap()] = *v;
    }
    m
}

pub fn random_kappa<R: Rng>(rng: &mut R, depth: usize) -> Vec<f64> {
    (0..depth).map(|_| rng.random_range(0.5..=1.0)).collect()
}

/// Runs `frames` random steps through both the library and the naive
/// evaluator; returns the largest elementwise difference seen.
pub fn compare_with_naive<R: Rng>(rng: &mut R, tree: &PlainTree, frames: usize) -> f64 {
    let lib_tree = tree.build();
    let kappa = random_kappa(rng, tree.depth);
    let mut s = session(&lib_tree, &kappa);
    let mut cond = tree.uniform();
    let mut worst: f64 = 0.0;
    for _ in 0..frames {
        let mut lik = vec![0.0; tree.len()];
        for i in tree.leaves() {
            lik[i] = rng.random_range(0.01..5.0);
        }
        s.sweep(&node_map(&lib_tree, &lik)).unwrap();
        let (c, m) = naive_step(tree, &cond, &lik, &kappa);
        for i in 0..tree.len() {
            let id = lib_tree.id(&PlainTree::label(i)).unwrap();
            worst = worst
                .max((s.belief().conditional[id] - c[i]).abs())
                .max((s.belief().marginal[id] - m[i]).abs());
        }
        cond = c;
    }
    worst
}
