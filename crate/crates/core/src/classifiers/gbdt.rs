use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::binning::{BinnedMatrix, MAX_BINS};
use super::tree::{Node, Tree};
use crate::label::Label;
use crate::seed;

/// L2 penalty on leaf weights.
const LAMBDA: f64 = 1.0;

/// Gradient-boosted regression trees on the logistic loss. The raw score
/// is a log-odds for `Qualified`; its sign is the prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoosting {
    base_score: f64,
    trees: Vec<Tree>,
}

struct Grower<'a> {
    binned: &'a BinnedMatrix,
    grad: &'a [f64],
    hess: &'a [f64],
    features: &'a [usize],
    max_depth: usize,
    learning_rate: f64,
    tree: Tree,
}

impl Grower<'_> {
    fn grow(&mut self, idx: &mut [u32], depth: usize) -> u32 {
        let (g, h) = idx.iter().fold((0.0, 0.0), |(g, h), &i| {
            (g + self.grad[i as usize], h + self.hess[i as usize])
        });
        let leaf = Node::Leaf(-g / (h + LAMBDA) * self.learning_rate);
        if depth >= self.max_depth || idx.len() < 2 {
            return self.tree.push(leaf);
        }
        let parent = g * g / (h + LAMBDA);
        let mut best: Option<(usize, usize, f64)> = None;
        let mut gs = [0.0f64; MAX_BINS];
        let mut hs = [0.0f64; MAX_BINS];
        for &f in self.features {
            let nb = self.binned.n_bins(f);
            if nb < 2 {
                continue;
            }
            gs[..nb].fill(0.0);
            hs[..nb].fill(0.0);
            let col = self.binned.column(f);
            for &i in idx.iter() {
                let b = col[i as usize] as usize;
                gs[b] += self.grad[i as usize];
                hs[b] += self.hess[i as usize];
            }
            let (mut gl, mut hl) = (0.0, 0.0);
            for b in 0..nb - 1 {
                gl += gs[b];
                hl += hs[b];
                let (gr, hr) = (g - gl, h - hl);
                let gain = gl * gl / (hl + LAMBDA) + gr * gr / (hr + LAMBDA) - parent;
                if gain > 1e-12 && best.is_none_or(|(_, _, s)| gain > s + 1e-12) {
                    best = Some((f, b, gain));
                }
            }
        }
        let Some((f, b, _)) = best else {
            return self.tree.push(leaf);
        };

        let col = self.binned.column(f);
        let mut split = 0;
        for k in 0..idx.len() {
            if usize::from(col[idx[k] as usize]) <= b {
                idx.swap(k, split);
                split += 1;
            }
        }
        if split == 0 || split == idx.len() {
            return self.tree.push(leaf);
        }
        let id = self.tree.push(leaf);
        let (l, r) = idx.split_at_mut(split);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.tree.set(
            id,
            Node::Split {
                feature: f as u32,
                threshold: self.binned.edges[f][b],
                left,
                right,
            },
        );
        id
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl GradientBoosting {
    pub(crate) fn fit(
        rows: &[&[f64]],
        ys: &[Label],
        n_rounds: usize,
        learning_rate: f64,
        max_depth: usize,
        feature_fraction: f64,
        seed: u64,
    ) -> Self {
        let binned = BinnedMatrix::build(rows);
        let n = rows.len();
        let d = binned.n_features;
        let target: Vec<f64> = ys.iter().map(|&y| f64::from(u8::from(y == Label::Qualified))).collect();
        let p0 = target.iter().sum::<f64>() / n as f64;
        let base_score = (p0 / (1.0 - p0)).ln();

        let mut score = vec![base_score; n];
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        let per_tree = ((feature_fraction * d as f64).ceil() as usize).clamp(1, d.max(1));
        let mut rng = seed::rng(seed);
        let mut trees = Vec::with_capacity(n_rounds);
        let mut idx: Vec<u32> = (0..n as u32).collect();
        for _ in 0..n_rounds {
            for i in 0..n {
                let p = sigmoid(score[i]);
                grad[i] = p - target[i];
                hess[i] = (p * (1.0 - p)).max(1e-12);
            }
            let mut features = sample(&mut rng, d, per_tree).into_vec();
            features.sort_unstable();
            let mut g = Grower {
                binned: &binned,
                grad: &grad,
                hess: &hess,
                features: &features,
                max_depth,
                learning_rate,
                tree: Tree::new(),
            };
            g.grow(&mut idx, 0);
            let tree = g.tree;
            for (s, r) in score.iter_mut().zip(rows) {
                *s += tree.eval(r);
            }
            trees.push(tree);
        }
        GradientBoosting { base_score, trees }
    }

    pub fn raw_score(&self, x: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.eval(x)).sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> Label {
        Label::from_score(self.raw_score(x))
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::testdata::{clusters, rows};

    #[test]
    fn base_score_is_prior_log_odds() {
        let (xs, ys) = clusters(40, 2, 1);
        let m = GradientBoosting::fit(&rows(&xs), &ys, 1, 0.1, 1, 1.0, 0);
        assert!(m.base_score.abs() < 1e-12);
        assert_eq!(m.n_trees(), 1);
    }

    #[test]
    fn training_loss_decreases() {
        let (xs, mut ys) = clusters(80, 3, 2);
        for i in (1..80).step_by(9) {
            ys[i] = ys[i].flipped();
        }
        let loss = |m: &GradientBoosting| {
            xs.iter()
                .zip(&ys)
                .map(|(x, y)| {
                    let z = m.raw_score(x) * y.sign() as f64;
                    (1.0 + (-z).exp()).ln()
                })
                .sum::<f64>()
        };
        let short = GradientBoosting::fit(&rows(&xs), &ys, 5, 0.3, 2, 1.0, 4);
        let long = GradientBoosting::fit(&rows(&xs), &ys, 40, 0.3, 2, 1.0, 4);
        assert!(loss(&long) < loss(&short));
    }
}
