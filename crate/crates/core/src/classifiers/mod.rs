//! Candidate sub-classifier families behind one fit/predict contract.
//!
//! All families output exactly ±1 ([`Label`]). Every stochastic choice
//! (bootstrap, feature subsampling, epoch shuffling) is drawn from the seed
//! carried in the [`ClassifierConfig`], so fitting is a pure function of
//! config and data.

mod binning;
mod forest;
mod gbdt;
mod knn;
mod svm;
mod tree;

pub use forest::RandomForest;
pub use gbdt::GradientBoosting;
pub use knn::NearestNeighbors;
pub use svm::LinearSvm;
pub use tree::{Node, Tree};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureVector;
use crate::label::Label;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error("degenerate training set: {0}")]
    DegenerateTrainingSet(String),
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("{samples} samples but {labels} labels")]
    LengthMismatch { samples: usize, labels: usize },
    #[error("invalid classifier config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Rf,
    Gbdt,
    Svm,
    Knn,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Rf, Family::Gbdt, Family::Svm, Family::Knn];

    pub fn name(self) -> &'static str {
        match self {
            Family::Rf => "rf",
            Family::Gbdt => "gbdt",
            Family::Svm => "svm",
            Family::Knn => "knn",
        }
    }
}

/// Family plus hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClassifierConfig {
    Rf {
        /// Odd, so tree votes cannot tie.
        n_trees: usize,
        max_depth: usize,
        /// Fraction of features tried at each split; `None` means `sqrt(d)`.
        #[serde(default)]
        feature_fraction: Option<f64>,
        seed: u64,
    },
    Gbdt {
        n_rounds: usize,
        learning_rate: f64,
        max_depth: usize,
        /// Fraction of features available to each tree.
        feature_fraction: f64,
        seed: u64,
    },
    Svm {
        /// Regularization constant C.
        c: f64,
        epochs: usize,
        seed: u64,
    },
    Knn {
        /// Odd neighbour count.
        k: usize,
    },
}

impl ClassifierConfig {
    pub fn default_for(family: Family, seed: u64) -> Self {
        match family {
            Family::Rf => ClassifierConfig::Rf {
                n_trees: 31,
                max_depth: 12,
                feature_fraction: None,
                seed,
            },
            Family::Gbdt => ClassifierConfig::Gbdt {
                n_rounds: 100,
                learning_rate: 0.1,
                max_depth: 3,
                feature_fraction: 0.3,
                seed,
            },
            Family::Svm => ClassifierConfig::Svm {
                c: 1.0,
                epochs: 50,
                seed,
            },
            Family::Knn => ClassifierConfig::Knn { k: 5 },
        }
    }

    pub fn family(&self) -> Family {
        match self {
            ClassifierConfig::Rf { .. } => Family::Rf,
            ClassifierConfig::Gbdt { .. } => Family::Gbdt,
            ClassifierConfig::Svm { .. } => Family::Svm,
            ClassifierConfig::Knn { .. } => Family::Knn,
        }
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: String| Err(ClassifierError::InvalidConfig(m));
        match *self {
            ClassifierConfig::Rf {
                n_trees,
                max_depth,
                feature_fraction,
                ..
            } => {
                if n_trees == 0 || n_trees % 2 == 0 {
                    return bad(format!("n_trees {n_trees} must be odd and positive"));
                }
                if max_depth == 0 {
                    return bad("max_depth must be positive".into());
                }
                if let Some(f) = feature_fraction {
                    if !(f > 0.0 && f <= 1.0) {
                        return bad(format!("feature_fraction {f} outside (0, 1]"));
                    }
                }
            }
            ClassifierConfig::Gbdt {
                n_rounds,
                learning_rate,
                max_depth,
                feature_fraction,
                ..
            } => {
                if n_rounds == 0 || max_depth == 0 {
                    return bad("n_rounds and max_depth must be positive".into());
                }
                if !(learning_rate > 0.0 && learning_rate.is_finite()) {
                    return bad(format!("learning_rate {learning_rate} must be positive"));
                }
                if !(feature_fraction > 0.0 && feature_fraction <= 1.0) {
                    return bad(format!("feature_fraction {feature_fraction} outside (0, 1]"));
                }
            }
            ClassifierConfig::Svm { c, epochs, .. } => {
                if !(c > 0.0 && c.is_finite()) || epochs == 0 {
                    return bad("c and epochs must be positive".into());
                }
            }
            ClassifierConfig::Knn { k } => {
                if k == 0 || k % 2 == 0 {
                    return bad(format!("k {k} must be odd and positive"));
                }
            }
        }
        Ok(())
    }

    /// Same hyperparameters with a different seed (KNN has none).
    pub fn with_seed(self, new_seed: u64) -> Self {
        match self {
            ClassifierConfig::Rf {
                n_trees,
                max_depth,
                feature_fraction,
                ..
            } => ClassifierConfig::Rf {
                n_trees,
                max_depth,
                feature_fraction,
                seed: new_seed,
            },
            ClassifierConfig::Gbdt {
                n_rounds,
                learning_rate,
                max_depth,
                feature_fraction,
                ..
            } => ClassifierConfig::Gbdt {
                n_rounds,
                learning_rate,
                max_depth,
                feature_fraction,
                seed: new_seed,
            },
            ClassifierConfig::Svm { c, epochs, .. } => ClassifierConfig::Svm {
                c,
                epochs,
                seed: new_seed,
            },
            knn @ ClassifierConfig::Knn { .. } => knn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Forest(RandomForest),
    Boosted(GradientBoosting),
    Svm(LinearSvm),
    Knn(NearestNeighbors),
}

/// A fitted classifier; immutable after training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    config: ClassifierConfig,
    feature_dim: usize,
    model: Model,
}

impl TrainedClassifier {
    pub(crate) fn from_parts(config: ClassifierConfig, feature_dim: usize, model: Model) -> Self {
        TrainedClassifier {
            config,
            feature_dim,
            model,
        }
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn predict(&self, x: &[f64]) -> Result<Label, ClassifierError> {
        if x.len() != self.feature_dim {
            return Err(ClassifierError::DimMismatch {
                expected: self.feature_dim,
                got: x.len(),
            });
        }
        Ok(match &self.model {
            Model::Forest(m) => m.predict(x),
            Model::Boosted(m) => m.predict(x),
            Model::Svm(m) => m.predict(x),
            Model::Knn(m) => m.predict(x),
        })
    }

    pub fn predict_vector(&self, x: &FeatureVector) -> Result<Label, ClassifierError> {
        self.predict(x.values())
    }

    pub fn predict_many(&self, rows: &[&[f64]]) -> Result<Vec<Label>, ClassifierError> {
        rows.iter().map(|r| self.predict(r)).collect()
    }
}

/// Fits on row slices; the rows are only read.
pub fn fit_rows(
    cfg: &ClassifierConfig,
    rows: &[&[f64]],
    ys: &[Label],
) -> Result<TrainedClassifier, ClassifierError> {
    cfg.validate()?;
    if rows.len() != ys.len() {
        return Err(ClassifierError::LengthMismatch {
            samples: rows.len(),
            labels: ys.len(),
        });
    }
    if rows.len() < 2 {
        return Err(ClassifierError::DegenerateTrainingSet(format!(
            "{} samples",
            rows.len()
        )));
    }
    let dim = rows[0].len();
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(ClassifierError::DimMismatch {
            expected: dim,
            got: r.len(),
        });
    }
    let positives = ys.iter().filter(|&&y| y == Label::Qualified).count();
    if positives == 0 || positives == ys.len() {
        return Err(ClassifierError::DegenerateTrainingSet(
            "only one class present".into(),
        ));
    }
    if rows.iter().all(|r| *r == rows[0]) {
        return Err(ClassifierError::DegenerateTrainingSet(
            "all training rows are identical".into(),
        ));
    }
    let model = match *cfg {
        ClassifierConfig::Rf {
            n_trees,
            max_depth,
            feature_fraction,
            seed,
        } => Model::Forest(RandomForest::fit(rows, ys, n_trees, max_depth, feature_fraction, seed)),
        ClassifierConfig::Gbdt {
            n_rounds,
            learning_rate,
            max_depth,
            feature_fraction,
            seed,
        } => Model::Boosted(GradientBoosting::fit(
            rows,
            ys,
            n_rounds,
            learning_rate,
            max_depth,
            feature_fraction,
            seed,
        )),
        ClassifierConfig::Svm { c, epochs, seed } => Model::Svm(LinearSvm::fit(rows, ys, c, epochs, seed)),
        ClassifierConfig::Knn { k } => Model::Knn(NearestNeighbors::fit(rows, ys, k)),
    };
    Ok(TrainedClassifier {
        config: *cfg,
        feature_dim: dim,
        model,
    })
}

pub fn fit(
    cfg: &ClassifierConfig,
    xs: &[FeatureVector],
    ys: &[Label],
) -> Result<TrainedClassifier, ClassifierError> {
    let rows: Vec<&[f64]> = xs.iter().map(|x| x.values()).collect();
    fit_rows(cfg, &rows, ys)
}

pub fn predict(c: &TrainedClassifier, x: &FeatureVector) -> Result<Label, ClassifierError> {
    c.predict_vector(x)
}

/// Dot product with independent partial sums so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s: f64 = acc.iter().sum();
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    let mut s: f64 = acc.iter().sum();
    for (x, y) in ra.iter().zip(rb) {
        let d = x - y;
        s += d * d;
    }
    s
}

#[cfg(test)]
pub(crate) mod testdata {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Two clusters around ±(1, …, 1) with per-coordinate noise in ±0.4,
    /// so every point sits at least 0.6 from the separating hyperplane.
    pub fn clusters(n: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Label>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for i in 0..n {
            let y = if i % 2 == 0 { Label::Qualified } else { Label::Defective };
            let c = y.sign() as f64;
            xs.push((0..dim).map(|_| c + rng.random_range(-0.4..0.4)).collect());
            ys.push(y);
        }
        (xs, ys)
    }

    pub fn rows(xs: &[Vec<f64>]) -> Vec<&[f64]> {
        xs.iter().map(|x| x.as_slice()).collect()
    }
}
