use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::classifiers::{ClassifierConfig, Family};
use crate::ensemble::EnsembleParams;
use crate::features::FeatureSpec;
use crate::imaging::{Patch, TriggerConfig, DEFAULT_ROI};
use crate::seed;
use crate::synthgen::SceneSpec;

/// One candidate: a classifier and the feature it reads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolEntry {
    pub classifier: ClassifierConfig,
    pub feature: FeatureSpec,
}

/// Parameters of the three extractors used by the default pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureDefaults {
    pub bhog_rows: usize,
    pub bhog_cols: usize,
    pub bhog_bins: usize,
    pub bgh_rows: usize,
    pub bgh_cols: usize,
    pub bgh_bins: usize,
    pub raw_scale: f64,
}

impl Default for FeatureDefaults {
    fn default() -> Self {
        FeatureDefaults {
            bhog_rows: 11,
            bhog_cols: 11,
            bhog_bins: 9,
            bgh_rows: 10,
            bgh_cols: 10,
            bgh_bins: 16,
            raw_scale: 0.6,
        }
    }
}

impl FeatureDefaults {
    pub fn specs(&self) -> [FeatureSpec; 3] {
        [
            FeatureSpec::Bhog {
                rows: self.bhog_rows,
                cols: self.bhog_cols,
                n_bins: self.bhog_bins,
            },
            FeatureSpec::Bgh {
                rows: self.bgh_rows,
                cols: self.bgh_cols,
                n_bins: self.bgh_bins,
            },
            FeatureSpec::Raw { scale: self.raw_scale },
        ]
    }
}

/// Sizes of the generated training and test sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub defective_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_train: 2000,
            n_test: 1000,
            defective_fraction: 0.5,
        }
    }
}

/// Synthetic conveyor stream layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub n_frames: usize,
    pub n_bottles: usize,
    /// Empty frames before the first bottle; the background is averaged from these.
    pub leading_background: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            n_frames: 600,
            n_bottles: 10,
            leading_background: 40,
        }
    }
}

/// Grids for the experiment sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Square BHoG grids, `n` meaning `n x n` blocks.
    pub bhog_sizes: Vec<usize>,
    pub bgh_sizes: Vec<usize>,
    pub raw_scales: Vec<f64>,
    pub ts: Vec<usize>,
    pub noise_ratios: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            bhog_sizes: vec![5, 7, 9, 11, 13],
            bgh_sizes: vec![6, 8, 10, 12, 14],
            raw_scales: vec![0.2, 0.4, 0.6, 0.8],
            ts: vec![1, 3, 5, 7, 9],
            noise_ratios: vec![0.0, 0.08, 0.16, 0.32, 0.48],
        }
    }
}

/// Grid of the analytic precision curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveConfig {
    pub epsilons: Vec<f64>,
    pub ts: Vec<usize>,
}

impl Default for CurveConfig {
    fn default() -> Self {
        CurveConfig {
            epsilons: (1..=9).map(|k| k as f64 * 0.05).collect(),
            ts: vec![1, 3, 5, 7, 9, 11],
        }
    }
}

/// Files read by the commands that do not generate their own inputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Training dataset directory or manifest.
    pub dataset: Option<PathBuf>,
    pub test_dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    /// Directory of `frame_*.pgm` files.
    pub stream: Option<PathBuf>,
    /// Default output directory.
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; every stage derives its own seed from it.
    pub seed: u64,
    pub scene: SceneSpec,
    pub data: DataConfig,
    pub stream: StreamConfig,
    pub trigger: TriggerConfig,
    pub roi: Patch,
    pub lambda_avg: f64,
    pub features: FeatureDefaults,
    /// Explicit candidate pool; when absent every family is paired with
    /// every extractor of `features`.
    pub pool: Option<Vec<PoolEntry>>,
    /// Selection parameters. `lambda_avg` and `seed` are filled in from the
    /// top level.
    pub ensemble: EnsembleParams,
    pub sweeps: SweepConfig,
    pub curve: CurveConfig,
    pub paths: PathsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            scene: SceneSpec::default(),
            data: DataConfig::default(),
            stream: StreamConfig::default(),
            trigger: TriggerConfig::default(),
            roi: DEFAULT_ROI,
            lambda_avg: 0.5,
            features: FeatureDefaults::default(),
            pool: None,
            ensemble: EnsembleParams::default(),
            sweeps: SweepConfig::default(),
            curve: CurveConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses a JSON document; unknown keys are errors.
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.scene.validate()?;
        self.trigger.validate()?;
        let (w, h) = (self.scene.frame_w, self.scene.frame_h);
        if self.roi.area() == 0 || !self.roi.fits(w, h) {
            return bad(format!("roi {:?} does not fit the {w}x{h} frame", self.roi));
        }
        if let Some(p) = self.trigger.patches.iter().find(|p| !p.fits(w, h)) {
            return bad(format!("trigger patch {p:?} does not fit the {w}x{h} frame"));
        }
        if !(self.lambda_avg > 0.0 && self.lambda_avg < 1.0) {
            return bad(format!("lambda_avg {} outside (0, 1)", self.lambda_avg));
        }
        if self.ensemble.lambda_avg != EnsembleParams::default().lambda_avg && self.ensemble.lambda_avg != self.lambda_avg {
            return bad("set lambda_avg at the top level, not inside ensemble".into());
        }
        self.ensemble_params().validate()?;
        for spec in self.features.specs() {
            spec.validate()?;
        }
        let pool = self.pool();
        if pool.is_empty() {
            return bad("candidate pool is empty".into());
        }
        for e in &pool {
            e.classifier.validate()?;
            e.feature.validate()?;
        }
        let d = &self.data;
        if d.n_train < 2 || d.n_test < 1 {
            return bad(format!("dataset sizes {} / {} too small", d.n_train, d.n_test));
        }
        if !(0.0..=1.0).contains(&d.defective_fraction) {
            return bad(format!("defective fraction {} outside [0, 1]", d.defective_fraction));
        }
        let s = &self.sweeps;
        if let Some(t) = s.ts.iter().chain(&self.curve.ts).find(|t| *t % 2 == 0) {
            return bad(format!("ensemble size {t} in a sweep is not odd"));
        }
        if let Some(r) = s.noise_ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return bad(format!("noise ratio {r} outside [0, 1]"));
        }
        if let Some(e) = self.curve.epsilons.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return bad(format!("curve epsilon {e} outside [0, 1]"));
        }
        for spec in feature_specs(self) {
            spec.validate()?;
        }
        Ok(())
    }

    /// The candidate pool, explicit or derived.
    pub fn pool(&self) -> Vec<PoolEntry> {
        match &self.pool {
            Some(p) => p.clone(),
            None => Family::ALL
                .iter()
                .enumerate()
                .flat_map(|(i, &f)| {
                    self.features.specs().map(|feature| PoolEntry {
                        classifier: ClassifierConfig::default_for(f, i as u64),
                        feature,
                    })
                })
                .collect(),
        }
    }

    pub fn pool_pairs(&self) -> Vec<(ClassifierConfig, FeatureSpec)> {
        self.pool().into_iter().map(|e| (e.classifier, e.feature)).collect()
    }

    /// Distinct classifier configs of the pool, in pool order.
    pub fn classifiers(&self) -> Vec<ClassifierConfig> {
        let mut out: Vec<ClassifierConfig> = Vec::new();
        for e in self.pool() {
            if !out.contains(&e.classifier) {
                out.push(e.classifier);
            }
        }
        out
    }

    pub fn ensemble_params(&self) -> EnsembleParams {
        EnsembleParams {
            lambda_avg: self.lambda_avg,
            seed: self.stage_seed("ensemble"),
            ..self.ensemble
        }
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        seed::derive(self.seed, stage)
    }

    /// Scene used for rendering, with the pipeline's ROI.
    pub fn scene(&self) -> SceneSpec {
        SceneSpec {
            roi: self.roi,
            ..self.scene.clone()
        }
    }
}

fn feature_specs(cfg: &PipelineConfig) -> Vec<FeatureSpec> {
    super::feature_grid(cfg)
}
