use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use super::{evaluate_in, Metrics, PipelineConfig, PipelineError};
use crate::classifiers::ClassifierConfig;
use crate::ensemble::{
    build_ensemble_in, fit_candidate_in, split_indices, BuildReport, CandidateCache, EnsembleError, EnsembleModel,
    EnsembleParams, FeatureBank, Rejection, SubClassifier,
};
use crate::features::FeatureSpec;
use crate::synthgen::{inject_label_noise_at, LabeledDataset};

/// Every extractor setting named by the sweep grids of `cfg`.
pub fn feature_grid(cfg: &PipelineConfig) -> Vec<FeatureSpec> {
    let f = &cfg.features;
    let s = &cfg.sweeps;
    let bhog = s.bhog_sizes.iter().map(|&n| FeatureSpec::Bhog {
        rows: n,
        cols: n,
        n_bins: f.bhog_bins,
    });
    let bgh = s.bgh_sizes.iter().map(|&n| FeatureSpec::Bgh {
        rows: n,
        cols: n,
        n_bins: f.bgh_bins,
    });
    let raw = s.raw_scales.iter().map(|&scale| FeatureSpec::Raw { scale });
    bhog.chain(bgh).chain(raw).collect()
}

pub fn write_csv<R: Serialize>(rows: &[R], out: impl Write) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureSweepRow {
    pub seed: u64,
    pub feature: &'static str,
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    pub n_bins: Option<usize>,
    pub scale: Option<f64>,
    pub family: &'static str,
    /// `ok`, `rejected` (degenerate training data) or `failed`.
    pub status: &'static str,
    /// Held-out accuracy of the single sub-classifier.
    pub precision: Option<f64>,
    pub detail: String,
}

fn feature_row(seed: u64, spec: &FeatureSpec, cfg: &ClassifierConfig) -> FeatureSweepRow {
    let (rows, cols, n_bins, scale) = match *spec {
        FeatureSpec::Bhog { rows, cols, n_bins } | FeatureSpec::Bgh { rows, cols, n_bins } => {
            (Some(rows), Some(cols), Some(n_bins), None)
        }
        FeatureSpec::Raw { scale } => (None, None, None, Some(scale)),
    };
    FeatureSweepRow {
        seed,
        feature: spec.kind_name(),
        rows,
        cols,
        n_bins,
        scale,
        family: cfg.family().name(),
        status: "failed",
        precision: None,
        detail: String::new(),
    }
}

/// Trains one sub-classifier per (feature setting, classifier) cell and
/// reports its held-out precision. A failing cell is recorded and skipped.
pub fn sweep_feature_params(
    d: &LabeledDataset,
    grid: &[FeatureSpec],
    classifiers: &[ClassifierConfig],
    p: &EnsembleParams,
) -> Result<Vec<FeatureSweepRow>, PipelineError> {
    if grid.is_empty() || classifiers.is_empty() {
        return Err(PipelineError::Config("feature sweep needs a grid and at least one classifier".into()));
    }
    p.validate()?;
    let mut out = Vec::with_capacity(grid.len() * classifiers.len());
    for spec in grid {
        // one bank per setting keeps only one feature matrix alive
        let mut bank = FeatureBank::new(d, p.lambda_avg);
        let extracted = bank.matrix(spec).map(|_| ());
        for cfg in classifiers {
            let mut row = feature_row(p.seed, spec, cfg);
            match &extracted {
                Err(e) => row.detail = e.to_string(),
                Ok(()) => match fit_candidate_in(&mut bank, cfg, spec, p) {
                    Ok(Ok(sub)) => {
                        row.status = "ok";
                        row.precision = Some(sub.p_correct());
                    }
                    Ok(Err(Rejection::DegenerateSplit { detail })) => {
                        row.status = "rejected";
                        row.detail = format!("degenerate training set: {detail}");
                    }
                    Ok(Err(r)) => row.detail = format!("{r:?}"),
                    Err(e) => row.detail = e.to_string(),
                },
            }
            out.push(row);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TSweepRow {
    pub seed: u64,
    pub t: usize,
    /// `complete` or `failed`.
    pub status: &'static str,
    pub members: usize,
    pub draws: usize,
    /// Distinct pool entries trained by the build.
    pub candidates_trained: usize,
    pub gate_rejections: usize,
    pub it_rejections: usize,
    pub min_member_error: Option<f64>,
    pub error_rate: Option<f64>,
    pub precision: Option<f64>,
    pub fp_rate: Option<f64>,
    pub fn_rate: Option<f64>,
}

/// Wall-clock cost of each build, kept apart from the reproducible report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TTimingRow {
    pub seed: u64,
    pub t: usize,
    pub train_seconds: f64,
    /// Relative to the smallest `t` of the sweep.
    pub time_ratio: f64,
}

#[derive(Debug)]
pub struct TSweep {
    pub rows: Vec<TSweepRow>,
    pub timing: Vec<TTimingRow>,
    /// The built ensemble of each row, `None` where the build failed.
    pub models: Vec<Option<EnsembleModel>>,
    pub reports: Vec<BuildReport>,
}

fn min_error(members: &[SubClassifier]) -> Option<f64> {
    members.iter().map(SubClassifier::delta_false).min_by(f64::total_cmp)
}

fn metric_fields(m: Option<&Metrics>) -> (Option<f64>, Option<f64>, Option<f64>, Option<f64>) {
    match m {
        Some(m) => (Some(m.error_rate), Some(m.precision), m.fp_rate, m.fn_rate),
        None => (None, None, None, None),
    }
}

/// Builds one ensemble per size in `ts` from a cold candidate cache and
/// scores it on `test`.
pub fn sweep_t(
    train: &LabeledDataset,
    test: &LabeledDataset,
    ts: &[usize],
    pool: &[(ClassifierConfig, FeatureSpec)],
    p: &EnsembleParams,
) -> Result<TSweep, PipelineError> {
    if ts.is_empty() {
        return Err(PipelineError::Config("no ensemble sizes to sweep".into()));
    }
    if let Some(t) = ts.iter().find(|t| *t % 2 == 0) {
        return Err(PipelineError::Config(format!("ensemble size {t} is not odd")));
    }
    p.validate()?;
    let mut bank = FeatureBank::new(train, p.lambda_avg);
    // extract up front so timings measure training only
    for (_, spec) in pool {
        bank.matrix(spec)?;
    }
    let mut test_bank = FeatureBank::new(test, p.lambda_avg);
    let mut sweep = TSweep {
        rows: Vec::new(),
        timing: Vec::new(),
        models: Vec::new(),
        reports: Vec::new(),
    };
    let mut seconds = Vec::new();
    for &t in ts {
        let params = EnsembleParams { t, ..*p };
        let mut cache = CandidateCache::new();
        let start = Instant::now();
        let built = build_ensemble_in(&mut bank, pool, &params, &mut cache);
        seconds.push(start.elapsed().as_secs_f64());
        let (model, report, members) = split_build(built)?;
        let metrics = model.as_ref().map(|m| evaluate_in(m, &mut test_bank)).transpose()?;
        let (error_rate, precision, fp_rate, fn_rate) = metric_fields(metrics.as_ref());
        sweep.rows.push(TSweepRow {
            seed: p.seed,
            t,
            status: if model.is_some() { "complete" } else { "failed" },
            members: members.len(),
            draws: report.draws,
            candidates_trained: cache.trained(),
            gate_rejections: report.gate_rejections + report.degenerate_rejections,
            it_rejections: report.it_rejections,
            min_member_error: min_error(&members),
            error_rate,
            precision,
            fp_rate,
            fn_rate,
        });
        sweep.models.push(model);
        sweep.reports.push(report);
    }
    let smallest = ts.iter().enumerate().min_by_key(|(_, t)| **t).map(|(i, _)| i).unwrap_or(0);
    let base = seconds[smallest].max(f64::MIN_POSITIVE);
    sweep.timing = ts
        .iter()
        .zip(&seconds)
        .map(|(&t, &s)| TTimingRow {
            seed: p.seed,
            t,
            train_seconds: s,
            time_ratio: s / base,
        })
        .collect();
    Ok(sweep)
}

type Built = (Option<EnsembleModel>, BuildReport, Vec<SubClassifier>);

/// Separates a build failure (a normal sweep outcome) from hard errors.
fn split_build(r: Result<(EnsembleModel, BuildReport), EnsembleError>) -> Result<Built, PipelineError> {
    match r {
        Ok((m, report)) => {
            let members = m.members().to_vec();
            Ok((Some(m), report, members))
        }
        Err(EnsembleError::BuildFailed(f)) => {
            let f = *f;
            Ok((None, f.report, f.members))
        }
        Err(e) => Err(e.into()),
    }
}

/// The first members of a failed build, trimmed to an odd count so they
/// can still vote. `None` when no member was accepted.
pub fn largest_odd_prefix(members: &[SubClassifier], lambda_avg: f64) -> Result<Option<EnsembleModel>, PipelineError> {
    if members.is_empty() {
        return Ok(None);
    }
    let k = if members.len() % 2 == 1 { members.len() } else { members.len() - 1 };
    Ok(Some(EnsembleModel::new(members[..k].to_vec(), lambda_avg)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseSweepRow {
    pub seed: u64,
    pub ratio: f64,
    pub n_flipped: usize,
    /// `complete`, `partial` (build stopped short; the accepted members
    /// vote) or `failed` (no member accepted).
    pub status: &'static str,
    pub members: usize,
    /// Members that voted in the evaluation.
    pub voters: usize,
    pub draws: usize,
    pub gate_rejections: usize,
    pub it_rejections: usize,
    pub min_member_error: Option<f64>,
    pub error_rate: Option<f64>,
    pub precision: Option<f64>,
    pub fp_rate: Option<f64>,
    pub fn_rate: Option<f64>,
}

#[derive(Debug)]
pub struct NoiseSweep {
    pub rows: Vec<NoiseSweepRow>,
    /// Complete builds only.
    pub models: Vec<Option<EnsembleModel>>,
}

/// Flips a share of the training-split labels of `train`, builds, and
/// scores on the untouched `test`. Each ratio starts from a cold candidate
/// cache; feature matrices are shared because only labels change.
pub fn sweep_label_noise(
    train: &LabeledDataset,
    test: &LabeledDataset,
    ratios: &[f64],
    pool: &[(ClassifierConfig, FeatureSpec)],
    p: &EnsembleParams,
    noise_seed: u64,
) -> Result<NoiseSweep, PipelineError> {
    if let Some(r) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(PipelineError::Config(format!("noise ratio {r} outside [0, 1]")));
    }
    p.validate()?;
    let (train_idx, _) = split_indices(train.len(), p);
    let mut clean_bank = FeatureBank::new(train, p.lambda_avg);
    for (_, spec) in pool {
        clean_bank.matrix(spec)?;
    }
    let mut test_bank = FeatureBank::new(test, p.lambda_avg);
    let mut sweep = NoiseSweep {
        rows: Vec::new(),
        models: Vec::new(),
    };
    for &ratio in ratios {
        let noisy = inject_label_noise_at(train, &train_idx, ratio, noise_seed)?;
        let n_flipped = noisy.items().iter().filter(|it| it.noise_flipped).count();
        let mut bank = clean_bank.relabeled(&noisy)?;
        let built = build_ensemble_in(&mut bank, pool, p, &mut CandidateCache::new());
        let (model, report, members) = split_build(built)?;
        let voting = match &model {
            Some(m) => Some(m.clone()),
            None => largest_odd_prefix(&members, p.lambda_avg)?,
        };
        let metrics = voting.as_ref().map(|m| evaluate_in(m, &mut test_bank)).transpose()?;
        let (error_rate, precision, fp_rate, fn_rate) = metric_fields(metrics.as_ref());
        sweep.rows.push(NoiseSweepRow {
            seed: p.seed,
            ratio,
            n_flipped,
            status: match (&model, &voting) {
                (Some(_), _) => "complete",
                (None, Some(_)) => "partial",
                (None, None) => "failed",
            },
            members: members.len(),
            voters: voting.as_ref().map_or(0, EnsembleModel::size),
            draws: report.draws,
            gate_rejections: report.gate_rejections + report.degenerate_rejections,
            it_rejections: report.it_rejections,
            min_member_error: min_error(&members),
            error_rate,
            precision,
            fp_rate,
            fn_rate,
        });
        sweep.models.push(model);
    }
    Ok(sweep)
}
