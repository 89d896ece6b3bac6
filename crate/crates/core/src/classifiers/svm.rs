use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dot;
use crate::label::Label;
use crate::seed;

/// Linear soft-margin SVM trained by Pegasos sub-gradient steps on
/// standardized features. The stored weights are folded back into the
/// original feature space, so prediction is one dot product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    weights: Vec<f64>,
    bias: f64,
}

impl LinearSvm {
    pub(crate) fn fit(rows: &[&[f64]], ys: &[Label], c: f64, epochs: usize, seed: u64) -> Self {
        let n = rows.len();
        let d = rows[0].len();
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, &x) in mean.iter_mut().zip(r.iter()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut scale = vec![0.0; d];
        for r in rows {
            for ((s, &x), &m) in scale.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        for s in scale.iter_mut() {
            let sd = (*s / n as f64).sqrt();
            *s = if sd > 1e-12 { 1.0 / sd } else { 0.0 };
        }
        // standardized rows with a trailing constant 1 for the bias
        let stride = d + 1;
        let mut z = vec![0.0; n * stride];
        for (i, r) in rows.iter().enumerate() {
            let zi = &mut z[i * stride..(i + 1) * stride];
            for j in 0..d {
                zi[j] = (r[j] - mean[j]) * scale[j];
            }
            zi[d] = 1.0;
        }
        let y: Vec<f64> = ys.iter().map(|l| l.sign() as f64).collect();

        let lambda = 1.0 / (c * n as f64);
        let mut rng = seed::rng(seed);
        let mut order: Vec<usize> = (0..n).collect();
        // w = s * v keeps the shrink step O(1)
        let mut v = vec![0.0; stride];
        let mut s = 1.0;
        let mut avg = vec![0.0; stride];
        let mut t = 0usize;
        for epoch in 0..epochs {
            order.shuffle(&mut rng);
            let last = epoch + 1 == epochs;
            for &i in &order {
                t += 1;
                let eta = 1.0 / (lambda * t as f64);
                let zi = &z[i * stride..(i + 1) * stride];
                let margin = y[i] * s * dot(&v, zi);
                let shrink = 1.0 - eta * lambda;
                if shrink <= 0.0 {
                    v.fill(0.0);
                    s = 1.0;
                } else {
                    s *= shrink;
                }
                if margin < 1.0 {
                    let step = eta * y[i] / s;
                    for (vj, &zj) in v.iter_mut().zip(zi) {
                        *vj += step * zj;
                    }
                }
                if s < 1e-100 {
                    v.iter_mut().for_each(|vj| *vj *= s);
                    s = 1.0;
                }
                if last {
                    for (a, &vj) in avg.iter_mut().zip(&v) {
                        *a += s * vj;
                    }
                }
            }
        }
        avg.iter_mut().for_each(|a| *a /= n as f64);

        let weights: Vec<f64> = (0..d).map(|j| avg[j] * scale[j]).collect();
        let bias = avg[d] - (0..d).map(|j| weights[j] * mean[j]).sum::<f64>();
        LinearSvm { weights, bias }
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> Label {
        Label::from_score(self.decision(x))
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }
}
