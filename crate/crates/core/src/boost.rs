//! Penalized regression trees and the boosted crust-value ensemble.
//!
//! Each tree minimizes `(1/n) sum (r_i - b(x_i))^2 + lambda2 * sum_leaves (1 + w^2)`
//! over leaf weights and, greedily, over structure. Trees are grown
//! best-first: the leaf whose best split gains the most is split next.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

/// Splits whose gain is below this fraction of the parent objective are
/// treated as rounding noise.
const GAIN_RTOL: f64 = 1e-10;

/// Exact minimizer of `(1/n) sum_leaf (r_i - w)^2 + lambda2 w^2`.
pub fn leaf_weight(residual_sum: f64, leaf_count: usize, n: usize, lambda2: f64) -> f64 {
    assert!(leaf_count >= 1, "empty leaf");
    residual_sum / (leaf_count as f64 + n as f64 * lambda2)
}

/// Penalized objective of one leaf at its optimal weight, without the
/// `(1/n) sum r^2` term (it cancels in split gains).
fn leaf_score(sum: f64, count: usize, n: usize, lambda2: f64) -> f64 {
    -sum * sum / (n as f64 * (count as f64 + n as f64 * lambda2)) + lambda2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub lambda2: f64,
    pub max_leaves: usize,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            lambda2: 0.0,
            max_leaves: 8,
            min_leaf: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        weight: f64,
    },
}

/// Axis-aligned regression tree stored as a node array, root at index 0.
/// Rows go left iff `x[feature] < threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn constant(weight: f64) -> Self {
        RegressionTree {
            nodes: vec![TreeNode::Leaf { weight }],
        }
    }

    pub fn predict(&self, row: ArrayView1<'_, f64>) -> f64 {
        let mut idx = 0;
        loop {
            match self.nodes[idx] {
                TreeNode::Leaf { weight } => return weight,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => idx = if row[feature] < threshold { left } else { right },
            }
        }
    }

    /// Index of the node a row ends at.
    pub fn leaf_index(&self, row: ArrayView1<'_, f64>) -> usize {
        let mut idx = 0;
        while let TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } = self.nodes[idx]
        {
            idx = if row[feature] < threshold { left } else { right };
        }
        idx
    }

    pub fn leaf_weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Leaf { weight } => Some(*weight),
            TreeNode::Split { .. } => None,
        })
    }

    pub fn n_leaves(&self) -> usize {
        self.leaf_weights().count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], idx: usize) -> usize {
            match nodes[idx] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// `sum_leaves (1 + w^2)`.
    pub fn penalty(&self) -> f64 {
        self.leaf_weights().map(|w| 1.0 + w * w).sum()
    }

    fn scaled(&self, factor: f64) -> Self {
        let nodes = self
            .nodes
            .iter()
            .map(|n| match n {
                TreeNode::Leaf { weight } => TreeNode::Leaf {
                    weight: weight * factor,
                },
                split => split.clone(),
            })
            .collect();
        RegressionTree { nodes }
    }
}

/// Row indices sorted by each feature, computed once per design matrix.
#[derive(Debug, Clone)]
pub struct FeatureOrder {
    sorted: Vec<Vec<u32>>,
}

impl FeatureOrder {
    pub fn new(x: &Array2<f64>) -> Self {
        let n = x.nrows();
        let sorted = (0..x.ncols())
            .map(|f| {
                let col = x.column(f);
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                idx
            })
            .collect();
        FeatureOrder { sorted }
    }
}

/// Best split of the rows of one node. `sorted[f]` lists the node's rows
/// ordered by feature `f`. Ties keep the lowest feature, then the lowest
/// threshold.
fn best_split_sorted(
    sorted: &[Vec<u32>],
    r: &[f64],
    x: &Array2<f64>,
    params: &TreeParams,
    n: usize,
) -> Option<Split> {
    let rows = sorted.first()?;
    let m = rows.len();
    let min_leaf = params.min_leaf.max(1);
    if m < 2 * min_leaf {
        return None;
    }
    let total: f64 = rows.iter().map(|&i| r[i as usize]).sum();
    let sum_sq: f64 = rows.iter().map(|&i| r[i as usize] * r[i as usize]).sum();
    let parent = leaf_score(total, m, n, params.lambda2);
    let floor = GAIN_RTOL * (sum_sq / n as f64 + params.lambda2);

    let mut best: Option<Split> = None;
    for (f, order) in sorted.iter().enumerate() {
        let col = x.column(f);
        let mut left_sum = 0.0;
        for pos in 0..m - 1 {
            let i = order[pos] as usize;
            left_sum += r[i];
            let count = pos + 1;
            if count < min_leaf || m - count < min_leaf {
                continue;
            }
            let (a, b) = (col[i], col[order[pos + 1] as usize]);
            if a >= b {
                continue;
            }
            let children = leaf_score(left_sum, count, n, params.lambda2)
                + leaf_score(total - left_sum, m - count, n, params.lambda2);
            let gain = parent - children;
            if gain > floor && best.is_none_or(|s| gain > s.gain) {
                let mid = 0.5 * (a + b);
                let threshold = if a < mid { mid } else { b };
                best = Some(Split {
                    feature: f,
                    threshold,
                    gain,
                });
            }
        }
    }
    best
}

/// Exhaustive best split of `rows` over all features and midpoints between
/// consecutive distinct values. `None` if no split has positive gain.
pub fn best_split(
    rows: &[usize],
    r: &[f64],
    x: &Array2<f64>,
    params: &TreeParams,
    n: usize,
) -> Option<Split> {
    let sorted: Vec<Vec<u32>> = (0..x.ncols())
        .map(|f| {
            let mut idx: Vec<u32> = rows.iter().map(|&i| i as u32).collect();
            idx.sort_by(|&a, &b| x[(a as usize, f)].total_cmp(&x[(b as usize, f)]));
            idx
        })
        .collect();
    best_split_sorted(&sorted, r, x, params, n)
}

struct OpenLeaf {
    node: usize,
    sorted: Vec<Vec<u32>>,
    sum: f64,
    count: usize,
    split: Option<Split>,
}

/// Fits one tree to the residuals `r` (length `n = x.nrows()`).
pub fn fit_tree(r: &[f64], x: &Array2<f64>, params: &TreeParams) -> RegressionTree {
    fit_tree_presorted(r, x, &FeatureOrder::new(x), params)
}

pub fn fit_tree_presorted(
    r: &[f64],
    x: &Array2<f64>,
    order: &FeatureOrder,
    params: &TreeParams,
) -> RegressionTree {
    let n = x.nrows();
    assert_eq!(r.len(), n);
    let max_leaves = params.max_leaves.max(1);
    let total: f64 = r.iter().sum();
    let mut nodes = vec![TreeNode::Leaf {
        weight: leaf_weight(total, n, n, params.lambda2),
    }];
    if max_leaves == 1 || x.ncols() == 0 {
        return RegressionTree { nodes };
    }

    let root_sorted = order.sorted.clone();
    let split = best_split_sorted(&root_sorted, r, x, params, n);
    let mut open = vec![OpenLeaf {
        node: 0,
        sorted: root_sorted,
        sum: total,
        count: n,
        split,
    }];
    let mut goes_left = vec![false; n];
    let mut n_leaves = 1;

    while n_leaves < max_leaves {
        let mut pick: Option<usize> = None;
        for (i, leaf) in open.iter().enumerate() {
            if let Some(s) = leaf.split {
                if pick.is_none_or(|p| s.gain > open[p].split.unwrap().gain) {
                    pick = Some(i);
                }
            }
        }
        let Some(pick) = pick else { break };
        let leaf = open.swap_remove(pick);
        let split = leaf.split.unwrap();

        let col = x.column(split.feature);
        for &i in &leaf.sorted[0] {
            goes_left[i as usize] = col[i as usize] < split.threshold;
        }
        let mut left_sorted = Vec::with_capacity(leaf.sorted.len());
        let mut right_sorted = Vec::with_capacity(leaf.sorted.len());
        for order in &leaf.sorted {
            let (l, rt): (Vec<u32>, Vec<u32>) =
                order.iter().partition(|&&i| goes_left[i as usize]);
            left_sorted.push(l);
            right_sorted.push(rt);
        }
        let left_count = left_sorted[0].len();
        let left_sum: f64 = left_sorted[0].iter().map(|&i| r[i as usize]).sum();
        let right_sum = leaf.sum - left_sum;
        let right_count = leaf.count - left_count;

        let left_idx = nodes.len();
        let right_idx = left_idx + 1;
        nodes.push(TreeNode::Leaf {
            weight: leaf_weight(left_sum, left_count, n, params.lambda2),
        });
        nodes.push(TreeNode::Leaf {
            weight: leaf_weight(right_sum, right_count, n, params.lambda2),
        });
        nodes[leaf.node] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: left_idx,
            right: right_idx,
        };
        n_leaves += 1;

        for (node, sorted, sum, count) in [
            (left_idx, left_sorted, left_sum, left_count),
            (right_idx, right_sorted, right_sum, right_count),
        ] {
            let split = best_split_sorted(&sorted, r, x, params, n);
            open.push(OpenLeaf {
                node,
                sorted,
                sum,
                count,
                split,
            });
        }
        // keep the scan order stable: open leaves ordered by node index
        open.sort_by_key(|l| l.node);
    }
    RegressionTree { nodes }
}

/// Tree ensemble; stored trees already include the shrinkage factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostModel {
    pub trees: Vec<RegressionTree>,
    pub shrinkage: f64,
    #[serde(with = "crate::penalty_serde")]
    pub lambda2: f64,
}

impl BoostModel {
    pub fn new(shrinkage: f64, lambda2: f64) -> Self {
        BoostModel {
            trees: Vec::new(),
            shrinkage,
            lambda2,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    /// Appends `shrinkage * tree`.
    pub fn append_tree(&mut self, tree: &RegressionTree) {
        self.trees.push(tree.scaled(self.shrinkage));
    }

    pub fn predict(&self, row: ArrayView1<'_, f64>) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum()
    }

    /// `sum_t sum_leaves (1 + w^2)` over the stored trees.
    pub fn penalty(&self) -> f64 {
        self.trees.iter().map(RegressionTree::penalty).sum()
    }
}

/// `bm` with `shrinkage * tree` appended.
pub fn append_tree(bm: &BoostModel, tree: &RegressionTree) -> BoostModel {
    let mut out = bm.clone();
    out.append_tree(tree);
    out
}
