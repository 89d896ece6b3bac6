use serde::{Deserialize, Serialize};

use super::sq_dist;
use crate::label::Label;

/// Euclidean k-nearest-neighbour majority vote. Equal distances are
/// broken toward the lower training index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestNeighbors {
    k: usize,
    dim: usize,
    points: Vec<f64>,
    labels: Vec<Label>,
}

impl NearestNeighbors {
    pub(crate) fn fit(rows: &[&[f64]], ys: &[Label], k: usize) -> Self {
        let dim = rows[0].len();
        let mut points = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            points.extend_from_slice(r);
        }
        NearestNeighbors {
            k,
            dim,
            points,
            labels: ys.to_vec(),
        }
    }

    /// Indices of the `k` nearest training points, nearest first.
    pub fn neighbours(&self, x: &[f64]) -> Vec<usize> {
        let k = self.k.min(self.labels.len());
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for (i, p) in self.points.chunks_exact(self.dim).enumerate() {
            let d = sq_dist(p, x);
            if best.len() == k && d >= best[k - 1].0 {
                continue;
            }
            // strict comparison keeps earlier indices ahead of equal distances
            let at = best.partition_point(|&(bd, _)| bd <= d);
            best.insert(at, (d, i));
            best.truncate(k);
        }
        best.into_iter().map(|(_, i)| i).collect()
    }

    pub fn predict(&self, x: &[f64]) -> Label {
        let votes: i32 = self
            .neighbours(x)
            .into_iter()
            .map(|i| self.labels[i].sign() as i32)
            .sum();
        Label::from_score(f64::from(votes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_go_to_lower_index() {
        let data = [[1.0], [-1.0], [1.0], [-1.0]];
        let rows: Vec<&[f64]> = data.iter().map(|r| r.as_slice()).collect();
        let ys = [Label::Defective, Label::Qualified, Label::Qualified, Label::Qualified];
        let m = NearestNeighbors::fit(&rows, &ys, 3);
        assert_eq!(m.neighbours(&[0.0]), vec![0, 1, 2]);
        let m1 = NearestNeighbors::fit(&rows, &ys, 1);
        assert_eq!(m1.predict(&[0.0]), Label::Defective);
    }

    #[test]
    fn majority_of_neighbours() {
        let data = [[0.0], [0.1], [0.2], [5.0], [5.1]];
        let rows: Vec<&[f64]> = data.iter().map(|r| r.as_slice()).collect();
        let ys = [Label::Defective, Label::Defective, Label::Qualified, Label::Qualified, Label::Qualified];
        let m = NearestNeighbors::fit(&rows, &ys, 3);
        assert_eq!(m.predict(&[0.05]), Label::Defective);
        assert_eq!(m.predict(&[4.0]), Label::Qualified);
    }
}
