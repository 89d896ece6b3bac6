//! Quantile binning of training columns for histogram split search.
//!
//! Sample `i` of feature `f` falls in bin `b` iff `x <= edges[f][b]` and
//! `x > edges[f][b - 1]`, so "bin <= b" is exactly the real-valued test
//! `x <= edges[f][b]` used at prediction time.

pub(crate) const MAX_BINS: usize = 32;

pub(crate) struct BinnedMatrix {
    pub n_samples: usize,
    pub n_features: usize,
    /// Feature-major: `bins[f * n_samples + i]`.
    pub bins: Vec<u8>,
    pub edges: Vec<Vec<f64>>,
}

impl BinnedMatrix {
    pub fn build(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        let mut bins = vec![0u8; n * d];
        let mut edges = Vec::with_capacity(d);
        let mut column = vec![0.0; n];
        let mut sorted = vec![0.0; n];
        for f in 0..d {
            for (c, r) in column.iter_mut().zip(rows) {
                *c = r[f];
            }
            sorted.copy_from_slice(&column);
            sorted.sort_unstable_by(f64::total_cmp);
            let e = quantile_edges(&sorted);
            let out = &mut bins[f * n..(f + 1) * n];
            for (slot, &x) in out.iter_mut().zip(&column) {
                *slot = e.partition_point(|&edge| edge < x) as u8;
            }
            edges.push(e);
        }
        BinnedMatrix {
            n_samples: n,
            n_features: d,
            bins,
            edges,
        }
    }

    #[inline]
    pub fn column(&self, f: usize) -> &[u8] {
        &self.bins[f * self.n_samples..(f + 1) * self.n_samples]
    }

    pub fn n_bins(&self, f: usize) -> usize {
        self.edges[f].len() + 1
    }
}

/// At most `MAX_BINS - 1` cut points at midpoints between distinct sorted values.
fn quantile_edges(sorted: &[f64]) -> Vec<f64> {
    let n = sorted.len();
    let mut edges: Vec<f64> = Vec::new();
    for q in 1..MAX_BINS {
        let pos = q * n / MAX_BINS;
        if pos == 0 || pos >= n {
            continue;
        }
        let (lo, hi) = (sorted[pos - 1], sorted[pos]);
        if lo < hi {
            let mid = lo + (hi - lo) / 2.0;
            if edges.last().is_none_or(|&last| mid > last) {
                edges.push(mid);
            }
        }
    }
    if edges.is_empty() {
        // few samples or heavy ties: fall back to every distinct gap
        for w in sorted.windows(2) {
            if w[0] < w[1] && edges.len() < MAX_BINS - 1 {
                edges.push(w[0] + (w[1] - w[0]) / 2.0);
            }
        }
    }
    edges
}
