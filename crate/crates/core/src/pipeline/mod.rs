//! Configuration, metrics, the inspection loop and the experiment sweeps.

mod config;
mod inspect;
mod metrics;
mod sweep;

pub use config::{
    CurveConfig, DataConfig, FeatureDefaults, PathsConfig, PipelineConfig, PoolEntry, StreamConfig, SweepConfig,
};
pub use inspect::{
    capture_background, inspection_window, read_events, run_inspection, write_events, DirFrames, FrameSource, InspectionEvent, Verdict,
};
pub use metrics::{evaluate, evaluate_in, evaluate_predictions, Metrics};
pub use sweep::{
    feature_grid, largest_odd_prefix, sweep_feature_params, sweep_label_noise, sweep_t, write_csv, FeatureSweepRow,
    NoiseSweep, NoiseSweepRow, TSweep, TSweepRow, TTimingRow,
};

use thiserror::Error;

use crate::classifiers::ClassifierError;
use crate::ensemble::EnsembleError;
use crate::features::FeatureError;
use crate::imaging::ImagingError;
use crate::synthgen::SynthError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("io: {0}")]
    Io(String),
}

impl PipelineError {
    /// True for errors caused by bad input rather than by a failed run.
    pub fn is_validation(&self) -> bool {
        match self {
            PipelineError::Config(_) | PipelineError::EmptyDataset => true,
            PipelineError::Feature(FeatureError::InvalidSpec(_) | FeatureError::BinCount(_)) => true,
            PipelineError::Classifier(ClassifierError::InvalidConfig(_)) => true,
            PipelineError::Ensemble(EnsembleError::InvalidParams(_) | EnsembleError::EvenSize(_)) => true,
            PipelineError::Imaging(ImagingError::InvalidTrigger(_)) => true,
            PipelineError::Synth(SynthError::InvalidSpec(_) | SynthError::InvalidRequest(_)) => true,
            _ => false,
        }
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Io(e.to_string())
    }
}

impl From<csv::Error> for PipelineError {
    fn from(e: csv::Error) -> Self {
        PipelineError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for PipelineError {
    fn from(e: serde_json::Error) -> Self {
        PipelineError::Io(e.to_string())
    }
}
