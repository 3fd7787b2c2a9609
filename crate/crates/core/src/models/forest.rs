//! Bagged CART trees with Gini impurity.
//!
//! Split search scans the sorted distinct values of each candidate feature;
//! equal-impurity splits resolve to the lower feature index, then the lower
//! threshold, so the tree does not depend on the order features were drawn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// `None` means ⌈√m⌉ for m input features.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: None, min_samples_leaf: 1, features_per_split: None, bootstrap: true }
    }
}

impl ForestParams {
    pub fn resolved_features_per_split(&self, n_features: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .clamp(1, n_features.max(1))
    }
}

/// Dense column-major view of the training rows.
pub(crate) struct Columns {
    pub n_rows: usize,
    pub n_cols: usize,
    pub data: Vec<f64>,
}

impl Columns {
    pub fn from_rows(rows: &[Vec<f64>], n_cols: usize) -> Self {
        let n_rows = rows.len();
        let mut data = vec![0.0; n_rows * n_cols];
        for (r, row) in rows.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                data[c * n_rows + r] = *v;
            }
        }
        Self { n_rows, n_cols, data }
    }

    fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.n_rows + row]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { probability: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    /// Positive-class fraction of the leaf `x` falls into.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { probability } => return probability,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct SplitChoice {
    impurity: f64,
    feature: usize,
    threshold: f64,
}

impl SplitChoice {
    fn better_than(&self, other: &SplitChoice) -> bool {
        (self.impurity, self.feature)
            .partial_cmp(&(other.impurity, other.feature))
            .map(|o| o.then(self.threshold.total_cmp(&other.threshold)))
            == Some(std::cmp::Ordering::Less)
    }
}

fn gini(pos: f64, neg: f64) -> f64 {
    let w = pos + neg;
    if w <= 0.0 {
        return 0.0;
    }
    let p = pos / w;
    let q = neg / w;
    1.0 - p * p - q * q
}

struct TreeBuilder<'a> {
    data: &'a Columns,
    labels: &'a [u8],
    weights: &'a [f64],
    max_depth: Option<usize>,
    min_leaf: usize,
    per_split: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn leaf(&self, samples: &[usize]) -> Node {
        let (pos, total) = samples.iter().fold((0.0, 0.0), |(p, t), &r| {
            let w = self.weights[r];
            (p + if self.labels[r] == 1 { w } else { 0.0 }, t + w)
        });
        Node::Leaf { probability: if total > 0.0 { pos / total } else { 0.0 } }
    }

    fn best_split_on(&self, samples: &[usize], feature: usize) -> Option<SplitChoice> {
        let mut pairs: Vec<(f64, usize)> = samples.iter().map(|&r| (self.data.get(r, feature), r)).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (total_pos, total_neg) = pairs.iter().fold((0.0, 0.0), |(p, n), &(_, r)| {
            let w = self.weights[r];
            if self.labels[r] == 1 {
                (p + w, n)
            } else {
                (p, n + w)
            }
        });
        let total = total_pos + total_neg;
        let m = pairs.len();
        let mut left_pos = 0.0;
        let mut left_neg = 0.0;
        let mut best: Option<SplitChoice> = None;
        for i in 0..m - 1 {
            let (v, r) = pairs[i];
            let w = self.weights[r];
            if self.labels[r] == 1 {
                left_pos += w;
            } else {
                left_neg += w;
            }
            let next = pairs[i + 1].0;
            if v == next {
                continue;
            }
            let n_left = i + 1;
            if n_left < self.min_leaf || m - n_left < self.min_leaf {
                continue;
            }
            let right_pos = total_pos - left_pos;
            let right_neg = total_neg - left_neg;
            let wl = left_pos + left_neg;
            let wr = right_pos + right_neg;
            let impurity = (wl * gini(left_pos, left_neg) + wr * gini(right_pos, right_neg)) / total;
            let mid = v + (next - v) / 2.0;
            let threshold = if mid < next { mid } else { v };
            let cand = SplitChoice { impurity, feature, threshold };
            if best.as_ref().is_none_or(|b| cand.better_than(b)) {
                best = Some(cand);
            }
        }
        best
    }

    fn is_constant(&self, samples: &[usize], feature: usize) -> bool {
        let first = self.data.get(samples[0], feature);
        samples.iter().all(|&r| self.data.get(r, feature) == first)
    }

    fn build(&mut self, samples: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(self.leaf(&samples));
        let Node::Leaf { probability } = self.nodes[id] else { unreachable!() };
        let pure = probability == 0.0 || probability == 1.0;
        if pure || self.max_depth.is_some_and(|d| depth >= d) || samples.len() < 2 * self.min_leaf {
            return id;
        }

        // Draw features without replacement until `per_split` non-constant
        // ones have been examined or the pool runs out.
        let n_cols = self.data.n_cols;
        let mut pool: Vec<usize> = (0..n_cols).collect();
        let mut examined = 0;
        let mut best: Option<SplitChoice> = None;
        for i in 0..n_cols {
            if examined == self.per_split {
                break;
            }
            let j = self.rng.gen_range(i..n_cols);
            pool.swap(i, j);
            let f = pool[i];
            if self.is_constant(&samples, f) {
                continue;
            }
            examined += 1;
            if let Some(c) = self.best_split_on(&samples, f) {
                if best.as_ref().is_none_or(|b| c.better_than(b)) {
                    best = Some(c);
                }
            }
        }
        let Some(split) = best else { return id };

        let (left, right): (Vec<usize>, Vec<usize>) =
            samples.into_iter().partition(|&r| self.data.get(r, split.feature) <= split.threshold);
        let l = self.build(left, depth + 1);
        let r = self.build(right, depth + 1);
        self.nodes[id] = Node::Split { feature: split.feature, threshold: split.threshold, left: l, right: r };
        id
    }
}

/// Fits one CART tree on rows with positive weight.
pub(crate) fn fit_tree(
    data: &Columns,
    labels: &[u8],
    weights: &[f64],
    params: &ForestParams,
    rng: ChaCha8Rng,
) -> DecisionTree {
    let samples: Vec<usize> = (0..data.n_rows).filter(|&r| weights[r] > 0.0).collect();
    let mut b = TreeBuilder {
        data,
        labels,
        weights,
        max_depth: params.max_depth,
        min_leaf: params.min_samples_leaf.max(1),
        per_split: params.resolved_features_per_split(data.n_cols),
        rng,
        nodes: Vec::new(),
    };
    if samples.is_empty() {
        return DecisionTree { nodes: vec![Node::Leaf { probability: 0.0 }] };
    }
    b.build(samples, 0);
    DecisionTree { nodes: b.nodes }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    pub n_features: usize,
}

impl RandomForest {
    /// Rows must already be in canonical order; each tree's bootstrap draw and
    /// feature sampling come from a generator seeded by `(seed, tree index)`.
    pub(crate) fn fit(data: &Columns, labels: &[u8], class_weights: [f64; 2], params: &ForestParams, seed: u64) -> Self {
        let n = data.n_rows;
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
                let mut weights: Vec<f64> = if params.bootstrap {
                    let mut counts = vec![0.0; n];
                    for _ in 0..n {
                        counts[rng.gen_range(0..n)] += 1.0;
                    }
                    counts
                } else {
                    vec![1.0; n]
                };
                for (w, &y) in weights.iter_mut().zip(labels) {
                    *w *= class_weights[y as usize];
                }
                fit_tree(data, labels, &weights, params, rng)
            })
            .collect();
        Self { trees, n_features: data.n_cols }
    }

    pub fn tree_probabilities(&self, x: &[f64]) -> Vec<f64> {
        self.trees.iter().map(|t| t.predict(x)).collect()
    }

    /// Mean of the per-tree leaf fractions, summed in tree order.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.tree_probabilities(x).iter().sum::<f64>() / self.trees.len() as f64
    }
}
