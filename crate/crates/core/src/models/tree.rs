//! CART decision trees with class-weighted Gini impurity, and bagged forests.
//!
//! Feature vectors are sparse and non-negative, so a node's values for one
//! feature are a block of implicit zeros followed by the stored nonzeros.
//! Split search only touches the nonzeros present in the node.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::models::Example;
use crate::vectorizer::FeatureVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { max_depth: Some(100) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            bootstrap: true,
        }
    }
}

pub const LEAF: i32 = -1;

/// One tree node. Leaves have `left == right == LEAF`; `value` holds the
/// weighted class proportions `[noncyber, cyber]` of the training samples
/// that reached the node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub feature: u32,
    pub threshold: f32,
    pub left: i32,
    pub right: i32,
    pub value: [f32; 2],
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.left == LEAF
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// Rebuilds a tree from its node array, checking child links.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self, String> {
        if nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        let n = nodes.len() as i32;
        for (i, node) in nodes.iter().enumerate() {
            let leaf = node.left == LEAF && node.right == LEAF;
            // Children always come after their parent, which rules out cycles.
            let valid = |c: i32| c > i as i32 && c < n;
            if !leaf && !(valid(node.left) && valid(node.right)) {
                return Err(format!("node {i} has invalid children {} / {}", node.left, node.right));
            }
        }
        Ok(Tree { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn leaf_value(&self, x: &FeatureVector) -> [f32; 2] {
        let mut node = &self.nodes[0];
        while !node.is_leaf() {
            let next = if x.get(node.feature) <= node.threshold {
                node.left
            } else {
                node.right
            };
            node = &self.nodes[next as usize];
        }
        node.value
    }

    pub fn vote(&self, x: &FeatureVector) -> Label {
        let [p0, p1] = self.leaf_value(x);
        if p1 > p0 {
            Label::Cyber
        } else {
            Label::Noncyber
        }
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        let mut max = 0;
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.is_leaf() {
                for c in [node.left, node.right] {
                    depth[c as usize] = depth[i] + 1;
                    max = max.max(depth[i] + 1);
                }
            }
        }
        max
    }
}

struct Builder<'a> {
    data: &'a [Example],
    weights: &'a [f64],
    max_depth: Option<usize>,
    /// Features examined per split; `None` examines all.
    max_features: Option<usize>,
    rng: Option<ChaCha8Rng>,
}

struct Split {
    feature: u32,
    threshold: f32,
    impurity: f64,
}

fn gini(w: [f64; 2]) -> f64 {
    let total = w[0] + w[1];
    if total <= 0.0 {
        return 0.0;
    }
    let (p0, p1) = (w[0] / total, w[1] / total);
    1.0 - p0 * p0 - p1 * p1
}

impl Builder<'_> {
    fn class_weights(&self, samples: &[u32]) -> [f64; 2] {
        let mut w = [0.0; 2];
        for &s in samples {
            w[self.data[s as usize].label.index()] += self.weights[s as usize];
        }
        w
    }

    fn build(mut self, root: Vec<u32>) -> Tree {
        let mut nodes: Vec<Node> = Vec::new();
        // (samples, depth, index of the node to fill)
        let mut stack = vec![(root, 0usize, 0usize)];
        nodes.push(placeholder());
        while let Some((samples, depth, at)) = stack.pop() {
            let w = self.class_weights(&samples);
            let total = w[0] + w[1];
            nodes[at].value = [(w[0] / total) as f32, (w[1] / total) as f32];
            let pure = w[0] == 0.0 || w[1] == 0.0;
            let depth_capped = self.max_depth.is_some_and(|d| depth >= d);
            if pure || depth_capped || samples.len() < 2 {
                continue;
            }
            let Some(split) = self.best_split(&samples, w) else {
                continue;
            };
            let (left, right): (Vec<u32>, Vec<u32>) = samples
                .iter()
                .partition(|&&s| self.data[s as usize].vector.get(split.feature) <= split.threshold);
            debug_assert!(!left.is_empty() && !right.is_empty());
            let (li, ri) = (nodes.len(), nodes.len() + 1);
            nodes.push(placeholder());
            nodes.push(placeholder());
            let node = &mut nodes[at];
            node.feature = split.feature;
            node.threshold = split.threshold;
            node.left = li as i32;
            node.right = ri as i32;
            stack.push((right, depth + 1, ri));
            stack.push((left, depth + 1, li));
        }
        Tree { nodes }
    }

    fn best_split(&mut self, samples: &[u32], totals: [f64; 2]) -> Option<Split> {
        // (feature, value, sample) for every stored entry in the node.
        let mut entries: Vec<(u32, f32, u32)> = Vec::new();
        for &s in samples {
            for (f, v) in self.data[s as usize].vector.iter() {
                entries.push((f, v, s));
            }
        }
        entries.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));

        // Ranges of `entries` per feature that is not constant within the node.
        let n = samples.len();
        let mut groups: Vec<(usize, usize)> = Vec::new();
        let mut start = 0;
        while start < entries.len() {
            let mut end = start + 1;
            while end < entries.len() && entries[end].0 == entries[start].0 {
                end += 1;
            }
            let constant = end - start == n && entries[start].1 == entries[end - 1].1;
            if !constant {
                groups.push((start, end));
            }
            start = end;
        }
        if groups.is_empty() {
            return None;
        }
        let chosen: Vec<usize> = match (self.max_features, self.rng.as_mut()) {
            (Some(k), Some(rng)) if groups.len() > k => {
                let mut idx = sample(rng, groups.len(), k).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..groups.len()).collect(),
        };

        let parent = totals[0] + totals[1];
        let mut best: Option<Split> = None;
        for g in chosen {
            let (lo, hi) = groups[g];
            let run = &entries[lo..hi];
            let mut nonzero = [0.0; 2];
            for e in run {
                nonzero[self.data[e.2 as usize].label.index()] += self.weights[e.2 as usize];
            }
            // Left side starts as the zero block.
            let mut left = [totals[0] - nonzero[0], totals[1] - nonzero[1]];
            let zero_count = n - run.len();
            let consider = |left: [f64; 2], lo_val: f32, hi_val: f32, best: &mut Option<Split>| {
                let right = [totals[0] - left[0], totals[1] - left[1]];
                let wl = left[0] + left[1];
                let wr = right[0] + right[1];
                let impurity = (wl * gini(left) + wr * gini(right)) / parent;
                if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                    let mut threshold = ((lo_val as f64 + hi_val as f64) / 2.0) as f32;
                    if threshold >= hi_val {
                        threshold = lo_val;
                    }
                    *best = Some(Split {
                        feature: run[0].0,
                        threshold,
                        impurity,
                    });
                }
            };
            if zero_count > 0 {
                consider(left, 0.0, run[0].1, &mut best);
            }
            let mut i = 0;
            while i < run.len() {
                let v = run[i].1;
                while i < run.len() && run[i].1 == v {
                    let s = run[i].2 as usize;
                    left[self.data[s].label.index()] += self.weights[s];
                    i += 1;
                }
                if i < run.len() {
                    consider(left, v, run[i].1, &mut best);
                }
            }
        }
        best
    }
}

fn placeholder() -> Node {
    Node {
        feature: 0,
        threshold: 0.0,
        left: LEAF,
        right: LEAF,
        value: [0.0, 0.0],
    }
}

pub(crate) fn fit_tree(data: &[Example], weights: &[f64], _dim: usize, params: &TreeParams) -> Tree {
    let builder = Builder {
        data,
        weights,
        max_depth: params.max_depth,
        max_features: None,
        rng: None,
    };
    builder.build((0..data.len() as u32).collect())
}

pub(crate) fn fit_forest(data: &[Example], weights: &[f64], dim: usize, params: &ForestParams, seed: u64) -> Vec<Tree> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_features = ((dim as f64).sqrt().floor() as usize).max(1);
    let n = data.len();
    (0..params.n_trees)
        .map(|_| {
            let mut counts = vec![0u32; n];
            if params.bootstrap {
                for _ in 0..n {
                    counts[rng.gen_range(0..n)] += 1;
                }
            } else {
                counts.fill(1);
            }
            let sample_weights: Vec<f64> = weights.iter().zip(&counts).map(|(w, &c)| w * c as f64).collect();
            let root: Vec<u32> = (0..n as u32).filter(|&i| counts[i as usize] > 0).collect();
            let tree_rng = ChaCha8Rng::seed_from_u64(rng.gen());
            let builder = Builder {
                data,
                weights: &sample_weights,
                max_depth: params.max_depth,
                max_features: Some(max_features),
                rng: Some(tree_rng),
            };
            builder.build(root)
        })
        .collect()
}
