use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::binning::{BinnedMatrix, MAX_BINS};
use super::tree::{Node, Tree};
use crate::label::Label;
use crate::seed;

/// Bagged Gini trees voting by majority. Leaves hold ±1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<Tree>,
}

struct Grower<'a, R: Rng> {
    binned: &'a BinnedMatrix,
    qualified: &'a [bool],
    max_depth: usize,
    mtry: usize,
    rng: &'a mut R,
    tree: Tree,
}

impl<R: Rng> Grower<'_, R> {
    fn grow(&mut self, idx: &mut [u32], depth: usize) -> u32 {
        let n = idx.len();
        let pos = idx.iter().filter(|&&i| self.qualified[i as usize]).count();
        let majority = if 2 * pos >= n { 1.0 } else { -1.0 };
        if pos == 0 || pos == n || depth >= self.max_depth {
            return self.tree.push(Node::Leaf(majority));
        }

        let d = self.binned.n_features;
        let candidates = sample(self.rng, d, self.mtry.min(d));
        let mut best: Option<(usize, usize, f64)> = None;
        let mut tot = [0u32; MAX_BINS];
        let mut qual = [0u32; MAX_BINS];
        for f in candidates.iter() {
            let nb = self.binned.n_bins(f);
            if nb < 2 {
                continue;
            }
            tot[..nb].fill(0);
            qual[..nb].fill(0);
            let col = self.binned.column(f);
            for &i in idx.iter() {
                let b = col[i as usize] as usize;
                tot[b] += 1;
                qual[b] += u32::from(self.qualified[i as usize]);
            }
            let (mut nl, mut pl) = (0f64, 0f64);
            for b in 0..nb - 1 {
                nl += f64::from(tot[b]);
                pl += f64::from(qual[b]);
                let nr = n as f64 - nl;
                if nl == 0.0 || nr == 0.0 {
                    continue;
                }
                let pr = pos as f64 - pl;
                let (ql, qr) = (nl - pl, nr - pr);
                // maximizing this minimizes the weighted Gini impurity
                let score = (pl * pl + ql * ql) / nl + (pr * pr + qr * qr) / nr;
                if best.is_none_or(|(_, _, s)| score > s + 1e-12) {
                    best = Some((f, b, score));
                }
            }
        }
        let Some((f, b, _)) = best else {
            return self.tree.push(Node::Leaf(majority));
        };

        let col = self.binned.column(f);
        let mut split = 0;
        for k in 0..n {
            if usize::from(col[idx[k] as usize]) <= b {
                idx.swap(k, split);
                split += 1;
            }
        }
        let id = self.tree.push(Node::Leaf(majority));
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

impl RandomForest {
    pub fn from_trees(trees: Vec<Tree>) -> Self {
        RandomForest { trees }
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub(crate) fn fit(
        rows: &[&[f64]],
        ys: &[Label],
        n_trees: usize,
        max_depth: usize,
        feature_fraction: Option<f64>,
        seed: u64,
    ) -> Self {
        let binned = BinnedMatrix::build(rows);
        let qualified: Vec<bool> = ys.iter().map(|&y| y == Label::Qualified).collect();
        let n = rows.len();
        let d = binned.n_features;
        let mtry = match feature_fraction {
            Some(frac) => ((frac * d as f64).ceil() as usize).max(1),
            None => ((d as f64).sqrt().round() as usize).max(1),
        };
        let trees = (0..n_trees)
            .map(|t| {
                let mut rng = seed::rng(seed::derive_index(seed, t as u64));
                let mut idx: Vec<u32> = (0..n).map(|_| rng.random_range(0..n) as u32).collect();
                let mut g = Grower {
                    binned: &binned,
                    qualified: &qualified,
                    max_depth,
                    mtry,
                    rng: &mut rng,
                    tree: Tree::new(),
                };
                g.grow(&mut idx, 0);
                g.tree
            })
            .collect();
        RandomForest { trees }
    }

    pub fn predict(&self, x: &[f64]) -> Label {
        let votes: f64 = self.trees.iter().map(|t| t.eval(x)).sum();
        Label::from_score(votes)
    }
}
