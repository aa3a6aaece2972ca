use rayon::prelude::*;

use super::presort::{midpoint, partition, Columns, PARALLEL_WORK};
use super::ModelError;
use crate::ids_data::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_samples_split: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: 32,
            min_samples_split: 2,
        }
    }
}

/// Gini impurity `1 - sum (c_k / n)^2`.
pub fn gini(counts: &[u64]) -> Result<f64, ModelError> {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(ModelError::EmptyNode);
    }
    let n = n as f64;
    Ok(1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { counts: Vec<u64> },
}

/// A CART classification tree stored in preorder; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                TreeNode::Leaf { .. } => return i,
            }
        }
    }

    pub fn leaf_counts(&self, x: &[f64]) -> &[u64] {
        match &self.nodes[self.leaf_index(x)] {
            TreeNode::Leaf { counts } => counts,
            TreeNode::Split { .. } => unreachable!(),
        }
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let counts = self.leaf_counts(x);
        let n: u64 = counts.iter().sum();
        counts.iter().map(|&c| c as f64 / n as f64).collect()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &DecisionTree, i: usize) -> usize {
            match &t.nodes[i] {
                TreeNode::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }
}

/// Split quality `sum_L c^2 / n_L + sum_R c^2 / n_R` as an exact fraction;
/// larger means lower weighted Gini impurity.
#[derive(Debug, Clone, Copy)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn new(sq_left: u64, n_left: u64, sq_right: u64, n_right: u64) -> Self {
        Self {
            num: sq_left as u128 * n_right as u128 + sq_right as u128 * n_left as u128,
            den: n_left as u128 * n_right as u128,
        }
    }

    fn beats(&self, other: &Score) -> bool {
        // num/den > o.num/o.den without overflow: compare via u128 halves
        mul_cmp(self.num, other.den, other.num, self.den) == std::cmp::Ordering::Greater
    }
}

/// Compares `a * b` with `c * d` exactly.
fn mul_cmp(a: u128, b: u128, c: u128, d: u128) -> std::cmp::Ordering {
    fn wide(x: u128, y: u128) -> (u128, u128) {
        let (xh, xl) = (x >> 64, x & u64::MAX as u128);
        let (yh, yl) = (y >> 64, y & u64::MAX as u128);
        let ll = xl * yl;
        let lh = xl * yh;
        let hl = xh * yl;
        let hh = xh * yh;
        let mid = (ll >> 64) + (lh & u64::MAX as u128) + (hl & u64::MAX as u128);
        let lo = (ll & u64::MAX as u128) | (mid << 64);
        let hi = hh + (lh >> 64) + (hl >> 64) + (mid >> 64);
        (hi, lo)
    }
    wide(a, b).cmp(&wide(c, d))
}

struct Builder<'a> {
    cols: &'a Columns,
    y: &'a [usize],
    k: usize,
    config: TreeConfig,
    nodes: Vec<TreeNode>,
    scratch: Vec<bool>,
}

impl Builder<'_> {
    fn counts(&self, rows: &[u32]) -> Vec<u64> {
        let mut c = vec![0u64; self.k];
        for &r in rows {
            c[self.y[r as usize]] += 1;
        }
        c
    }

    fn best_for_feature(&self, j: usize, order: &[u32], total: &[u64]) -> Option<(Score, f64)> {
        let col = &self.cols.cols[j];
        let n = order.len() as u64;
        let mut left = vec![0u64; self.k];
        let mut right = total.to_vec();
        let mut sq_left = 0u64;
        let mut sq_right: u64 = total.iter().map(|c| c * c).sum();
        let mut best: Option<(Score, f64)> = None;
        for p in 0..order.len() - 1 {
            let r = order[p] as usize;
            let c = self.y[r];
            sq_left += 2 * left[c] + 1;
            left[c] += 1;
            sq_right -= 2 * right[c] - 1;
            right[c] -= 1;
            let (a, b) = (col[r], col[order[p + 1] as usize]);
            if a == b {
                continue;
            }
            let n_left = p as u64 + 1;
            let s = Score::new(sq_left, n_left, sq_right, n - n_left);
            if best.as_ref().is_none_or(|(bs, _)| s.beats(bs)) {
                best = Some((s, midpoint(a, b)));
            }
        }
        best
    }

    fn grow(&mut self, orders: Vec<Vec<u32>>, depth: usize) -> usize {
        let rows = &orders[0];
        let counts = self.counts(rows);
        let me = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            counts: counts.clone(),
        });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.config.max_depth || rows.len() < self.config.min_samples_split.max(2) {
            return me;
        }
        let d = orders.len();
        let scan = |j: usize| self.best_for_feature(j, &orders[j], &counts);
        let per_feature: Vec<Option<(Score, f64)>> = if rows.len() * d >= PARALLEL_WORK {
            (0..d).into_par_iter().map(scan).collect()
        } else {
            (0..d).map(scan).collect()
        };
        let mut best: Option<(usize, Score, f64)> = None;
        for (j, cand) in per_feature.into_iter().enumerate() {
            if let Some((s, t)) = cand {
                if best.as_ref().is_none_or(|(_, bs, _)| s.beats(bs)) {
                    best = Some((j, s, t));
                }
            }
        }
        let Some((feature, _, threshold)) = best else {
            return me;
        };
        let col = &self.cols.cols[feature];
        for &r in &orders[0] {
            self.scratch[r as usize] = col[r as usize] <= threshold;
        }
        let (l, r) = partition(&orders, &self.scratch);
        drop(orders);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[me] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }
}

/// Exact greedy CART with Gini impurity. Among equally good splits the
/// lowest feature index wins, then the lowest threshold. Data whose rows
/// all share one feature vector yields a single majority leaf.
pub fn train_tree(data: &Dataset, config: &TreeConfig) -> Result<DecisionTree, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyNode);
    }
    if data.n_features() == 0 {
        return Err(ModelError::NoFeatures);
    }
    let cols = Columns::from_dataset(data);
    let orders = cols.presort();
    let mut b = Builder {
        cols: &cols,
        y: data.targets(),
        k: data.labels.len(),
        config: *config,
        nodes: Vec::new(),
        scratch: vec![false; data.len()],
    };
    b.grow(orders, 0);
    Ok(DecisionTree { nodes: b.nodes })
}
