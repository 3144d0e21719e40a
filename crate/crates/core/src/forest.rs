//! Deterministic random-forest classifier for the synthetic-data efficacy
//! harness: gini CART trees, per-tree bootstrap, sqrt(d) feature subsampling
//! at each split, majority vote with ties to the lowest class index.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{self, stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows trees until leaves are pure.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Debug, Clone)]
enum TreeNode {
    Leaf {
        class: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    fn predict_row(&self, row: &[f64]) -> usize {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { class } => return *class,
                TreeNode::Split { feature, threshold, left, right } => {
                    at = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomForest {
    trees: Vec<Tree>,
    n_classes: usize,
}

fn majority(class_counts: &[usize]) -> usize {
    let mut best = 0usize;
    let mut best_count = 0usize;
    for (c, &n) in class_counts.iter().enumerate() {
        if n > best_count {
            best_count = n;
            best = c;
        }
    }
    best
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

struct TreeBuilder<'a> {
    x: &'a Array2<f64>,
    y: &'a [usize],
    n_classes: usize,
    mtry: usize,
    cfg: &'a ForestConfig,
    nodes: Vec<TreeNode>,
}

impl<'a> TreeBuilder<'a> {
    fn class_counts(&self, samples: &[usize]) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes];
        for &i in samples {
            counts[self.y[i]] += 1;
        }
        counts
    }

    fn grow(&mut self, samples: Vec<usize>, depth: usize, rng: &mut impl Rng) -> usize {
        let counts = self.class_counts(&samples);
        let n = samples.len();
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_capped = self.cfg.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || n < 2 * self.cfg.min_samples_leaf {
            let id = self.nodes.len();
            self.nodes.push(TreeNode::Leaf { class: majority(&counts) });
            return id;
        }

        // sqrt(d) features per split, drawn without replacement then sorted
        // so tie-breaking prefers lower feature indices
        let d = self.x.ncols();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(rng);
        features.truncate(self.mtry);
        features.sort_unstable();

        let parent_gini = gini(&counts, n);
        let mut best: Option<(f64, usize, f64)> = None; // (impurity, feature, threshold)
        for &feat in &features {
            let mut order: Vec<usize> = samples.clone();
            order.sort_by(|&a, &b| {
                self.x[[a, feat]]
                    .partial_cmp(&self.x[[b, feat]])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut left_counts = vec![0usize; self.n_classes];
            let mut right_counts = counts.clone();
            for k in 0..n - 1 {
                let i = order[k];
                left_counts[self.y[i]] += 1;
                right_counts[self.y[i]] -= 1;
                let (a, b) = (self.x[[i, feat]], self.x[[order[k + 1], feat]]);
                if a == b {
                    continue; // no threshold separates equal values
                }
                let n_left = k + 1;
                let n_right = n - n_left;
                if n_left < self.cfg.min_samples_leaf || n_right < self.cfg.min_samples_leaf {
                    continue;
                }
                let impurity = (n_left as f64 * gini(&left_counts, n_left)
                    + n_right as f64 * gini(&right_counts, n_right))
                    / n as f64;
                let threshold = (a + b) / 2.0;
                let better = match best {
                    None => impurity < parent_gini - 1e-12,
                    Some((bi, _, _)) => impurity < bi - 1e-12,
                };
                if better {
                    best = Some((impurity, feat, threshold));
                }
            }
        }

        match best {
            None => {
                let id = self.nodes.len();
                self.nodes.push(TreeNode::Leaf { class: majority(&counts) });
                id
            }
            Some((_, feature, threshold)) => {
                let (left_samples, right_samples): (Vec<usize>, Vec<usize>) = samples
                    .into_iter()
                    .partition(|&i| self.x[[i, feature]] <= threshold);
                let id = self.nodes.len();
                self.nodes.push(TreeNode::Leaf { class: 0 }); // placeholder
                let left = self.grow(left_samples, depth + 1, rng);
                let right = self.grow(right_samples, depth + 1, rng);
                self.nodes[id] = TreeNode::Split { feature, threshold, left, right };
                id
            }
        }
    }
}

impl RandomForest {
    /// Fit on a numeric feature matrix and class indices. Identical
    /// (data, config, seed) inputs produce an identical forest.
    pub fn fit(
        x: &Array2<f64>,
        y: &[usize],
        n_classes: usize,
        cfg: &ForestConfig,
        seed: u64,
    ) -> Result<RandomForest> {
        if x.nrows() == 0 || x.nrows() != y.len() {
            return Err(Error::Contract(format!(
                "forest needs matching non-empty features/labels, got {} rows and {} labels",
                x.nrows(),
                y.len()
            )));
        }
        if cfg.n_trees == 0 || cfg.min_samples_leaf == 0 {
            return Err(Error::Config("n_trees and min_samples_leaf must be positive".into()));
        }
        if y.iter().any(|&c| c >= n_classes) {
            return Err(Error::Contract("label index out of range".into()));
        }

        let n = x.nrows();
        let mtry = (x.ncols() as f64).sqrt().ceil() as usize;
        let trees: Vec<Tree> = (0..cfg.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = seeding::rng_from(seed, &[stage::FOREST, t as u64]);
                let bootstrap: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let mut builder = TreeBuilder {
                    x,
                    y,
                    n_classes,
                    mtry: mtry.max(1),
                    cfg,
                    nodes: Vec::new(),
                };
                builder.grow(bootstrap, 0, &mut rng);
                Tree { nodes: builder.nodes }
            })
            .collect();

        Ok(RandomForest { trees, n_classes })
    }

    pub fn predict(&self, x: &Array2<f64>) -> Vec<usize> {
        (0..x.nrows())
            .map(|i| {
                let row: Vec<f64> = x.row(i).to_vec();
                let mut votes = vec![0usize; self.n_classes];
                for tree in &self.trees {
                    votes[tree.predict_row(&row)] += 1;
                }
                majority(&votes)
            })
            .collect()
    }

    pub fn accuracy(&self, x: &Array2<f64>, y: &[usize]) -> f64 {
        let preds = self.predict(x);
        let hits = preds.iter().zip(y).filter(|(p, t)| p == t).count();
        hits as f64 / y.len() as f64
    }
}
