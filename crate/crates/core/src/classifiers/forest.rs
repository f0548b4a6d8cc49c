//! Random decision forest, one independent forest per attribute.
//!
//! Trees are grown on bootstrap samples with Gini splitting over a random
//! subset of `√dim` candidate features per node. Leaves store the positive
//! fraction of the samples that reached them.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Candidate features per split; `None` means `⌈√dim⌉`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            trees: 32,
            max_depth: 8,
            min_samples_split: 2,
            max_features: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Node {
    Leaf {
        prob: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecisionTree {
    /// Arena of nodes; index 0 is the root.
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    /// Positive-class probability; `x[feature] <= threshold` goes left.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { prob } => return prob,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
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

    pub fn is_leaf(&self) -> bool {
        matches!(self.nodes.as_slice(), [Node::Leaf { .. }])
    }
}

/// Best Gini split of `idx` over `features`: `(feature, threshold, weighted child impurity)`.
///
/// Thresholds are midpoints between consecutive distinct values. Returns
/// `None` when no split lowers the impurity.
pub fn best_split(x: &[Vec<f64>], y: &[u8], idx: &[usize], features: &[usize]) -> Option<(usize, f64, f64)> {
    let n = idx.len() as f64;
    let pos: f64 = idx.iter().map(|&i| y[i] as f64).sum();
    let parent = gini(pos, n);
    let mut best: Option<(usize, f64, f64)> = None;
    let mut sorted: Vec<(f64, u8)> = Vec::with_capacity(idx.len());
    for &f in features {
        sorted.clear();
        sorted.extend(idx.iter().map(|&i| (x[i][f], y[i])));
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left_n = 0.0;
        let mut left_pos = 0.0;
        for w in 0..sorted.len() - 1 {
            left_n += 1.0;
            left_pos += sorted[w].1 as f64;
            if sorted[w].0 == sorted[w + 1].0 {
                continue;
            }
            let right_n = n - left_n;
            let score = (left_n * gini(left_pos, left_n) + right_n * gini(pos - left_pos, right_n)) / n;
            if score < parent - 1e-12 && best.map_or(true, |b| score < b.2) {
                let threshold = 0.5 * (sorted[w].0 + sorted[w + 1].0);
                best = Some((f, threshold, score));
            }
        }
    }
    best
}

fn gini(pos: f64, n: f64) -> f64 {
    if n <= 0.0 {
        return 0.0;
    }
    let p = pos / n;
    2.0 * p * (1.0 - p)
}

/// Grow one tree on the samples `idx` (repeats allowed).
pub fn grow_tree<R: Rng>(x: &[Vec<f64>], y: &[u8], idx: Vec<usize>, config: &ForestConfig, rng: &mut R) -> DecisionTree {
    let dim = x[0].len();
    let m = config
        .max_features
        .unwrap_or_else(|| (dim as f64).sqrt().ceil() as usize)
        .clamp(1, dim);
    let mut nodes = Vec::new();
    grow(x, y, idx, 0, config, m, rng, &mut nodes);
    DecisionTree { nodes }
}

#[allow(clippy::too_many_arguments)]
fn grow<R: Rng>(
    x: &[Vec<f64>],
    y: &[u8],
    idx: Vec<usize>,
    depth: usize,
    config: &ForestConfig,
    m: usize,
    rng: &mut R,
    nodes: &mut Vec<Node>,
) -> usize {
    let here = nodes.len();
    let pos = idx.iter().filter(|&&i| y[i] == 1).count();
    let prob = if idx.is_empty() { 0.5 } else { pos as f64 / idx.len() as f64 };
    nodes.push(Node::Leaf { prob });
    let pure = pos == 0 || pos == idx.len();
    if pure || depth >= config.max_depth || idx.len() < config.min_samples_split.max(2) {
        return here;
    }
    let dim = x[0].len();
    let features = sample(rng, dim, m).into_vec();
    let Some((feature, threshold, _)) = best_split(x, y, &idx, &features) else {
        return here;
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| x[i][feature] <= threshold);
    let left = grow(x, y, left_idx, depth + 1, config, m, rng, nodes);
    let right = grow(x, y, right_idx, depth + 1, config, m, rng, nodes);
    nodes[here] = Node::Split {
        feature,
        threshold,
        left,
        right,
    };
    here
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forest {
    /// `per_attribute[a]` holds the trees voting on attribute `a`.
    pub per_attribute: Vec<Vec<DecisionTree>>,
}

impl Forest {
    pub fn attributes(&self) -> usize {
        self.per_attribute.len()
    }

    /// Mean leaf probability per attribute.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        self.per_attribute
            .iter()
            .map(|trees| trees.iter().map(|t| t.predict_proba(x)).sum::<f64>() / trees.len() as f64)
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> Vec<u8> {
        super::to_bits(&self.predict_proba(x))
    }
}

/// Train `config.trees` trees per attribute; attributes train in parallel and
/// each draws from its own seed, so results do not depend on scheduling.
pub fn forest_train(features: &[Vec<f64>], labels: &[Vec<u8>], config: &ForestConfig) -> Result<Forest> {
    let n = features.len();
    if n < 2 {
        return Err(Error::Training(format!("forest needs at least 2 samples, got {n}")));
    }
    if labels.len() != n {
        return Err(Error::Config(format!("{n} feature rows but {} label rows", labels.len())));
    }
    let dim = features[0].len();
    if dim == 0 || features.iter().any(|f| f.len() != dim) {
        return Err(Error::Config("forest features must be non-empty and equal length".into()));
    }
    if config.trees == 0 {
        return Err(Error::Config("forest needs at least one tree".into()));
    }
    let k = labels[0].len();
    let per_attribute = (0..k)
        .into_par_iter()
        .map(|a| {
            let y: Vec<u8> = labels.iter().map(|row| row[a]).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(a as u64 + 1)));
            (0..config.trees)
                .map(|_| {
                    let idx = if config.bootstrap {
                        (0..n).map(|_| rng.gen_range(0..n)).collect()
                    } else {
                        (0..n).collect()
                    };
                    grow_tree(features, &y, idx, config, &mut rng)
                })
                .collect()
        })
        .collect();
    Ok(Forest { per_attribute })
}
