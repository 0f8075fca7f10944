use ndarray::{Array2, ArrayView1};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{check_training_set, ClassifyError};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub num_trees: usize,
    /// Features tried per split; `None` means `round(sqrt(d))`.
    pub max_features: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            num_trees: 100,
            max_features: None,
            max_depth: None,
            min_samples_split: 2,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    /// `probs` is `[P(normal), P(anomaly)]`.
    Leaf { probs: [f64; 2] },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn anomaly_probability(&self, x: ArrayView1<f64>) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { probs } => return probs[1],
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
    pub num_features: usize,
    pub max_features: usize,
    /// Accuracy of out-of-bag votes; absent without bootstrap.
    pub oob_accuracy: Option<f64>,
}

impl ForestModel {
    /// Mean leaf anomaly frequency across trees.
    pub fn anomaly_probability(&self, x: ArrayView1<f64>) -> f64 {
        self.trees.iter().map(|t| t.anomaly_probability(x)).sum::<f64>() / self.trees.len() as f64
    }
}

fn gini(pos: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = pos as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: &'a Array2<f64>,
    y: &'a [bool],
    max_features: usize,
    max_depth: usize,
    min_samples_split: usize,
    nodes: Vec<TreeNode>,
    features: Vec<usize>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl Builder<'_> {
    fn leaf(&mut self, rows: &[usize]) -> usize {
        let pos = rows.iter().filter(|&&r| self.y[r]).count() as f64;
        let p = pos / rows.len() as f64;
        self.nodes.push(TreeNode::Leaf { probs: [1.0 - p, p] });
        self.nodes.len() - 1
    }

    fn best_split(&mut self, rows: &[usize], rng: &mut rng::Rng) -> Option<BestSplit> {
        let total_pos = rows.iter().filter(|&&r| self.y[r]).count();
        let n = rows.len();
        let mut best: Option<BestSplit> = None;
        let mut values: Vec<(f64, bool)> = Vec::with_capacity(n);
        // Partial Fisher-Yates: the first `max_features` entries are the sample.
        let d = self.features.len();
        for k in 0..self.max_features.min(d) {
            if self.max_features < d {
                let j = rng.random_range(k..d);
                self.features.swap(k, j);
            }
            let feature = self.features[k];
            values.clear();
            values.extend(rows.iter().map(|&r| (self.x[[r, feature]], self.y[r])));
            values.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0;
            for i in 0..n - 1 {
                left_pos += values[i].1 as usize;
                if values[i].0 == values[i + 1].0 {
                    continue;
                }
                let nl = i + 1;
                let impurity = nl as f64 * gini(left_pos, nl) + (n - nl) as f64 * gini(total_pos - left_pos, n - nl);
                if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                    best = Some(BestSplit {
                        feature,
                        threshold: values[i].0 + (values[i + 1].0 - values[i].0) / 2.0,
                        impurity,
                    });
                }
            }
        }
        let parent = n as f64 * gini(total_pos, n);
        best.filter(|b| b.impurity < parent - 1e-12)
    }

    fn build(&mut self, rows: &[usize], depth: usize, rng: &mut rng::Rng) -> usize {
        let pos = rows.iter().filter(|&&r| self.y[r]).count();
        if depth >= self.max_depth || rows.len() < self.min_samples_split || pos == 0 || pos == rows.len() {
            return self.leaf(rows);
        }
        let Some(split) = self.best_split(rows, rng) else {
            return self.leaf(rows);
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| self.x[[r, split.feature]] <= split.threshold);
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { probs: [0.0, 0.0] });
        let left = self.build(&left_rows, depth + 1, rng);
        let right = self.build(&right_rows, depth + 1, rng);
        self.nodes[id] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

/// Bagged CART trees with Gini splits and per-split feature sampling.
pub fn train_random_forest(x: &Array2<f64>, y: &[bool], config: &ForestConfig) -> Result<ForestModel, ClassifyError> {
    check_training_set(x, y)?;
    let d = x.ncols();
    if config.num_trees == 0 || d == 0 {
        return Err(ClassifyError::InvalidConfig("num_trees and feature count must be positive".into()));
    }
    let max_features = config
        .max_features
        .unwrap_or_else(|| ((d as f64).sqrt().round() as usize).max(1))
        .clamp(1, d);
    let n = x.nrows();
    let mut trees = Vec::with_capacity(config.num_trees);
    let mut oob_votes = vec![(0.0, 0usize); n];
    for t in 0..config.num_trees {
        let mut rng = rng::keyed(config.seed, &format!("forest-tree-{t}"));
        let rows: Vec<usize> = if config.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        let mut builder = Builder {
            x,
            y,
            max_features,
            max_depth: config.max_depth.unwrap_or(usize::MAX),
            min_samples_split: config.min_samples_split.max(2),
            nodes: Vec::new(),
            features: (0..d).collect(),
        };
        builder.build(&rows, 0, &mut rng);
        let tree = DecisionTree { nodes: builder.nodes };
        if config.bootstrap {
            let mut in_bag = vec![false; n];
            rows.iter().for_each(|&r| in_bag[r] = true);
            for r in (0..n).filter(|&r| !in_bag[r]) {
                oob_votes[r].0 += tree.anomaly_probability(x.row(r));
                oob_votes[r].1 += 1;
            }
        }
        trees.push(tree);
    }
    let oob_accuracy = config.bootstrap.then(|| {
        let scored: Vec<(usize, f64)> = oob_votes
            .iter()
            .enumerate()
            .filter(|(_, v)| v.1 > 0)
            .map(|(i, v)| (i, v.0 / v.1 as f64))
            .collect();
        let hits = scored.iter().filter(|&&(i, p)| (p > 0.5) == y[i]).count();
        hits as f64 / scored.len().max(1) as f64
    });
    Ok(ForestModel {
        trees,
        num_features: d,
        max_features,
        oob_accuracy,
    })
}
