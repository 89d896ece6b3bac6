use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::ensemble::{vote, EnsembleModel, FeatureBank};
use crate::label::Label;
use crate::synthgen::LabeledDataset;

/// Confusion counts with defective as the positive class: a false positive
/// rejects a qualified bottle, a false negative passes a defective one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_total: usize,
    pub n_qualified: usize,
    pub n_defective: usize,
    pub n_fp: usize,
    pub n_fn: usize,
    /// `n_fp / n_qualified`; `None` without qualified samples.
    pub fp_rate: Option<f64>,
    /// `n_fn / n_defective`; `None` without defective samples.
    pub fn_rate: Option<f64>,
    pub error_rate: f64,
    /// Share of correct verdicts.
    pub precision: f64,
}

/// Metrics of `predicted` against `truth`.
pub fn evaluate_predictions(predicted: &[Label], truth: &[Label]) -> Result<Metrics, PipelineError> {
    if truth.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    if predicted.len() != truth.len() {
        return Err(PipelineError::Config(format!(
            "{} predictions for {} samples",
            predicted.len(),
            truth.len()
        )));
    }
    let mut m = Metrics {
        n_total: truth.len(),
        n_qualified: 0,
        n_defective: 0,
        n_fp: 0,
        n_fn: 0,
        fp_rate: None,
        fn_rate: None,
        error_rate: 0.0,
        precision: 0.0,
    };
    for (&p, &t) in predicted.iter().zip(truth) {
        match t {
            Label::Qualified => {
                m.n_qualified += 1;
                m.n_fp += usize::from(p == Label::Defective);
            }
            Label::Defective => {
                m.n_defective += 1;
                m.n_fn += usize::from(p == Label::Qualified);
            }
        }
    }
    let rate = |k: usize, n: usize| (n > 0).then(|| k as f64 / n as f64);
    m.fp_rate = rate(m.n_fp, m.n_qualified);
    m.fn_rate = rate(m.n_fn, m.n_defective);
    m.error_rate = (m.n_fp + m.n_fn) as f64 / m.n_total as f64;
    m.precision = 1.0 - m.error_rate;
    Ok(m)
}

/// Classifies every sample of `d` and scores against its labels.
pub fn evaluate(m: &EnsembleModel, d: &LabeledDataset) -> Result<Metrics, PipelineError> {
    let mut bank = FeatureBank::new(d, m.lambda_avg());
    evaluate_in(m, &mut bank)
}

/// Like [`evaluate`], reusing features already extracted in `bank`.
pub fn evaluate_in(m: &EnsembleModel, bank: &mut FeatureBank<'_>) -> Result<Metrics, PipelineError> {
    let d = bank.data();
    if d.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    if bank.lambda_avg() != m.lambda_avg() {
        return Err(PipelineError::Config("feature bank and model normalize differently".into()));
    }
    let mut votes = vec![Vec::with_capacity(m.size()); d.len()];
    for member in m.members() {
        let mat = bank.matrix(member.feature())?;
        for (i, v) in votes.iter_mut().enumerate() {
            v.push(member.predict(mat.row(i))?);
        }
    }
    let predicted = votes.iter().map(|v| vote(v)).collect::<Result<Vec<_>, _>>()?;
    evaluate_predictions(&predicted, &d.labels())
}
