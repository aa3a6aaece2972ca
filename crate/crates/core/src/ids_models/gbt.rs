use rayon::prelude::*;

use super::presort::{midpoint, partition, Columns, PARALLEL_WORK};
use super::{softmax, ModelError};
use crate::ids_data::Dataset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbtConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub lambda: f64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            n_rounds: 100,
            learning_rate: 0.1,
            max_depth: 6,
            lambda: 1.0,
        }
    }
}

const MIN_HESSIAN: f64 = 1e-16;

#[derive(Debug, Clone, PartialEq)]
pub enum RegNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Already scaled by the learning rate.
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegTree {
    pub nodes: Vec<RegNode>,
}

impl RegTree {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                RegNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                RegNode::Leaf { value } => return *value,
            }
        }
    }
}

/// Softmax boosting: `rounds[r][k]` is the tree for class `k` in round `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Booster {
    pub n_classes: usize,
    pub rounds: Vec<Vec<RegTree>>,
}

impl Booster {
    pub fn raw_scores(&self, x: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.n_classes];
        for round in &self.rounds {
            for (k, t) in round.iter().enumerate() {
                s[k] += t.eval(x);
            }
        }
        s
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.raw_scores(x))
    }
}

/// Mean softmax cross-entropy of `scores` (row-major, `k` per row).
pub fn cross_entropy(scores: &[f64], y: &[usize], k: usize) -> f64 {
    let total: f64 = y
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let s = &scores[i * k..(i + 1) * k];
            let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + s.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - s[t]
        })
        .sum();
    total / y.len() as f64
}

/// Gradient and hessian of the softmax cross-entropy for class `k`.
pub fn gradients(probs: &[f64], y: &[usize], n_classes: usize, k: usize) -> (Vec<f64>, Vec<f64>) {
    y.iter()
        .enumerate()
        .map(|(i, &t)| {
            let p = probs[i * n_classes + k];
            let target = if t == k { 1.0 } else { 0.0 };
            (p - target, (p * (1.0 - p)).max(MIN_HESSIAN))
        })
        .unzip()
}

struct RegBuilder<'a> {
    cols: &'a Columns,
    g: &'a [f64],
    h: &'a [f64],
    config: &'a GbtConfig,
    nodes: Vec<RegNode>,
    scratch: Vec<bool>,
}

impl RegBuilder<'_> {
    fn sums(&self, rows: &[u32]) -> (f64, f64) {
        rows.iter()
            .fold((0.0, 0.0), |(g, h), &r| (g + self.g[r as usize], h + self.h[r as usize]))
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.config.lambda)
    }

    fn best_for_feature(&self, j: usize, order: &[u32], g_total: f64, h_total: f64) -> Option<(f64, f64)> {
        let col = &self.cols.cols[j];
        let parent = self.score(g_total, h_total);
        let (mut gl, mut hl) = (0.0, 0.0);
        let mut best: Option<(f64, f64)> = None;
        for p in 0..order.len() - 1 {
            let r = order[p] as usize;
            gl += self.g[r];
            hl += self.h[r];
            let (a, b) = (col[r], col[order[p + 1] as usize]);
            if a == b {
                continue;
            }
            let gain = self.score(gl, hl) + self.score(g_total - gl, h_total - hl) - parent;
            if gain > 0.0 && best.is_none_or(|(bg, _)| gain > bg) {
                best = Some((gain, midpoint(a, b)));
            }
        }
        best
    }

    fn grow(&mut self, orders: Vec<Vec<u32>>, depth: usize) -> usize {
        let (g, h) = self.sums(&orders[0]);
        let me = self.nodes.len();
        self.nodes.push(RegNode::Leaf {
            value: -g / (h + self.config.lambda) * self.config.learning_rate,
        });
        let n = orders[0].len();
        if depth >= self.config.max_depth || n < 2 {
            return me;
        }
        let d = orders.len();
        let scan = |j: usize| self.best_for_feature(j, &orders[j], g, h);
        let cands: Vec<Option<(f64, f64)>> = if n * d >= PARALLEL_WORK {
            (0..d).into_par_iter().map(scan).collect()
        } else {
            (0..d).map(scan).collect()
        };
        let mut best: Option<(usize, f64, f64)> = None;
        for (j, c) in cands.into_iter().enumerate() {
            if let Some((gain, t)) = c {
                if best.is_none_or(|(_, bg, _)| gain > bg) {
                    best = Some((j, gain, t));
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
        self.nodes[me] = RegNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }
}

fn fit_tree(cols: &Columns, orders: &[Vec<u32>], g: &[f64], h: &[f64], config: &GbtConfig) -> RegTree {
    let mut b = RegBuilder {
        cols,
        g,
        h,
        config,
        nodes: Vec::new(),
        scratch: vec![false; cols.n],
    };
    b.grow(orders.to_vec(), 0);
    RegTree { nodes: b.nodes }
}

/// Trains and returns the model together with the training cross-entropy
/// before the first round and after every round.
pub fn train_gbt_traced(data: &Dataset, config: &GbtConfig) -> Result<(Booster, Vec<f64>), ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyNode);
    }
    if data.per_class_counts().iter().filter(|&&c| c > 0).count() < 2 {
        return Err(ModelError::TooFewClasses);
    }
    let k = data.labels.len();
    let n = data.len();
    let y = data.targets();
    let cols = Columns::from_dataset(data);
    let orders = cols.presort();
    let mut scores = vec![0.0; n * k];
    let mut losses = vec![cross_entropy(&scores, y, k)];
    let mut rounds = Vec::with_capacity(config.n_rounds);
    for _ in 0..config.n_rounds {
        let probs: Vec<f64> = scores.chunks(k).flat_map(softmax).collect();
        let trees: Vec<RegTree> = (0..k)
            .into_par_iter()
            .map(|class| {
                let (g, h) = gradients(&probs, y, k, class);
                fit_tree(&cols, &orders, &g, &h, config)
            })
            .collect();
        for i in 0..n {
            let x = data.row(i);
            for (class, t) in trees.iter().enumerate() {
                scores[i * k + class] += t.eval(x);
            }
        }
        let loss = cross_entropy(&scores, y, k);
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss(format!("round {}", rounds.len() + 1)));
        }
        losses.push(loss);
        rounds.push(trees);
    }
    Ok((Booster { n_classes: k, rounds }, losses))
}

pub fn train_gbt(data: &Dataset, config: &GbtConfig) -> Result<Booster, ModelError> {
    train_gbt_traced(data, config).map(|(b, _)| b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids_data::{FeatureSchema, LabelMap};

    fn toy() -> Dataset {
        let rows: Vec<_> = (0..20)
            .map(|i| (vec![i as f64, (i % 3) as f64], usize::from(i >= 10)))
            .collect();
        Dataset::from_rows(
            FeatureSchema::new(vec!["a".into(), "b".into()]),
            LabelMap::new(vec!["A".into(), "B".into()]),
            &rows,
        )
    }

    #[test]
    fn initial_probabilities_uniform_and_gradients() {
        let d = toy();
        let k = 2;
        let probs: Vec<f64> = vec![0.0; d.len() * k].chunks(k).flat_map(softmax).collect();
        assert!(probs.iter().all(|&p| p == 0.5));
        let (g, h) = gradients(&probs, d.targets(), k, 1);
        for (i, gi) in g.iter().enumerate() {
            let y = if d.target(i) == 1 { 1.0 } else { 0.0 };
            assert_eq!(*gi, 0.5 - y);
        }
        assert!(h.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let d = toy();
        let k = 2;
        let scores = vec![0.0; d.len() * k];
        let probs: Vec<f64> = scores.chunks(k).flat_map(softmax).collect();
        let eps = 1e-6;
        for class in 0..k {
            let (g, _) = gradients(&probs, d.targets(), k, class);
            for i in [0, 7, 15] {
                let mut up = scores.clone();
                up[i * k + class] += eps;
                let mut down = scores.clone();
                down[i * k + class] -= eps;
                // cross_entropy is a mean, so scale back to the per-row loss
                let fd = (cross_entropy(&up, d.targets(), k) - cross_entropy(&down, d.targets(), k))
                    / (2.0 * eps)
                    * d.len() as f64;
                assert!((fd - g[i]).abs() < 1e-6, "{fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn one_round_reduces_loss() {
        let cfg = GbtConfig {
            n_rounds: 1,
            ..GbtConfig::default()
        };
        let (_, losses) = train_gbt_traced(&toy(), &cfg).unwrap();
        assert!((losses[0] - 2f64.ln()).abs() < 1e-12);
        assert!(losses[1] < losses[0]);
    }

    #[test]
    fn fits_separable_toy() {
        let d = toy();
        let cfg = GbtConfig {
            n_rounds: 20,
            ..GbtConfig::default()
        };
        let b = train_gbt(&d, &cfg).unwrap();
        for i in 0..d.len() {
            let p = b.probabilities(d.row(i));
            assert!(p[d.target(i)] > 0.5);
        }
        assert_eq!(b.rounds.len(), 20);
        assert!(b.rounds.iter().all(|r| r.len() == 2));
    }

    #[test]
    fn equal_scores_give_uniform_probabilities() {
        let b = Booster {
            n_classes: 3,
            rounds: vec![],
        };
        assert_eq!(b.probabilities(&[1.0]), vec![1.0 / 3.0; 3]);
    }
}
