//! Versioned binary model artifact: magic, format version, bincode body.
//!
//! The body uses plain (externally tagged) mirrors of the config enums,
//! whose JSON form is internally tagged and therefore not self-describing
//! enough for bincode.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EnsembleError, EnsembleModel, SubClassifier};
use crate::classifiers::{ClassifierConfig, Model, TrainedClassifier};
use crate::features::FeatureSpec;

const MAGIC: &[u8; 8] = b"BTLENSMB";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
enum SpecRepr {
    Bhog(usize, usize, usize),
    Bgh(usize, usize, usize),
    Raw(f64),
}

impl From<&FeatureSpec> for SpecRepr {
    fn from(s: &FeatureSpec) -> Self {
        match *s {
            FeatureSpec::Bhog { rows, cols, n_bins } => SpecRepr::Bhog(rows, cols, n_bins),
            FeatureSpec::Bgh { rows, cols, n_bins } => SpecRepr::Bgh(rows, cols, n_bins),
            FeatureSpec::Raw { scale } => SpecRepr::Raw(scale),
        }
    }
}

impl From<SpecRepr> for FeatureSpec {
    fn from(s: SpecRepr) -> Self {
        match s {
            SpecRepr::Bhog(rows, cols, n_bins) => FeatureSpec::Bhog { rows, cols, n_bins },
            SpecRepr::Bgh(rows, cols, n_bins) => FeatureSpec::Bgh { rows, cols, n_bins },
            SpecRepr::Raw(scale) => FeatureSpec::Raw { scale },
        }
    }
}

#[derive(Serialize, Deserialize)]
enum ConfigRepr {
    Rf(usize, usize, Option<f64>, u64),
    Gbdt(usize, f64, usize, f64, u64),
    Svm(f64, usize, u64),
    Knn(usize),
}

impl From<&ClassifierConfig> for ConfigRepr {
    fn from(c: &ClassifierConfig) -> Self {
        match *c {
            ClassifierConfig::Rf { n_trees, max_depth, feature_fraction, seed } => {
                ConfigRepr::Rf(n_trees, max_depth, feature_fraction, seed)
            }
            ClassifierConfig::Gbdt { n_rounds, learning_rate, max_depth, feature_fraction, seed } => {
                ConfigRepr::Gbdt(n_rounds, learning_rate, max_depth, feature_fraction, seed)
            }
            ClassifierConfig::Svm { c, epochs, seed } => ConfigRepr::Svm(c, epochs, seed),
            ClassifierConfig::Knn { k } => ConfigRepr::Knn(k),
        }
    }
}

impl From<ConfigRepr> for ClassifierConfig {
    fn from(c: ConfigRepr) -> Self {
        match c {
            ConfigRepr::Rf(n_trees, max_depth, feature_fraction, seed) => ClassifierConfig::Rf {
                n_trees,
                max_depth,
                feature_fraction,
                seed,
            },
            ConfigRepr::Gbdt(n_rounds, learning_rate, max_depth, feature_fraction, seed) => ClassifierConfig::Gbdt {
                n_rounds,
                learning_rate,
                max_depth,
                feature_fraction,
                seed,
            },
            ConfigRepr::Svm(c, epochs, seed) => ClassifierConfig::Svm { c, epochs, seed },
            ConfigRepr::Knn(k) => ClassifierConfig::Knn { k },
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MemberRepr {
    config: ConfigRepr,
    feature_dim: usize,
    model: Model,
    feature: SpecRepr,
    delta_false: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    members: Vec<MemberRepr>,
    lambda_avg: f64,
}

fn to_repr(m: &EnsembleModel) -> ModelRepr {
    ModelRepr {
        members: m
            .members
            .iter()
            .map(|s| MemberRepr {
                config: s.model.config().into(),
                feature_dim: s.model.feature_dim(),
                model: s.model.model().clone(),
                feature: (&s.feature).into(),
                delta_false: s.p_wrong,
            })
            .collect(),
        lambda_avg: m.lambda_avg,
    }
}

fn from_repr(r: ModelRepr) -> Result<EnsembleModel, EnsembleError> {
    let members = r
        .members
        .into_iter()
        .map(|m| {
            let model = TrainedClassifier::from_parts(m.config.into(), m.feature_dim, m.model);
            SubClassifier::new(model, m.feature.into(), m.delta_false)
        })
        .collect::<Result<Vec<_>, _>>()?;
    EnsembleModel::new(members, r.lambda_avg)
}

impl EnsembleModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>, EnsembleError> {
        let body = bincode::serialize(&to_repr(self)).map_err(|e| EnsembleError::Artifact(e.to_string()))?;
        let mut out = Vec::with_capacity(MAGIC.len() + 4 + body.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EnsembleError> {
        let bad = |m: String| EnsembleError::Artifact(m);
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("not an ensemble model artifact".into()));
        }
        let version = u32::from_le_bytes(bytes[MAGIC.len()..MAGIC.len() + 4].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported artifact version {version}")));
        }
        let r: ModelRepr = bincode::deserialize(&bytes[MAGIC.len() + 4..]).map_err(|e| bad(e.to_string()))?;
        from_repr(r)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EnsembleError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| EnsembleError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EnsembleError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| EnsembleError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
