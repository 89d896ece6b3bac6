//! Majority-vote ensembles of independence-tested sub-classifiers.
//!
//! A [`SubClassifier`] pairs a trained model with the feature it reads and
//! its held-out error. [`build_ensemble`] draws candidates from a pool,
//! gates them on held-out error, and admits a candidate only if its observed
//! disagreement with every current member is close to the disagreement two
//! independent predictors with the same error rates would show.

mod artifact;
mod build;

pub use build::{
    build_ensemble, build_ensemble_in, fit_candidate_in, split_indices, train_candidate, BuildFailure, BuildReport, Candidate,
    CandidateCache, DrawOutcome, DrawRecord, FeatureBank, FeatureMatrix, PairRecord, Rejection,
};

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::{ClassifierError, TrainedClassifier};
use crate::features::{extract, FeatureError, FeatureSpec, FeatureVector};
use crate::imaging::{normalize_gray_mean, Image, ImagingError};
use crate::label::Label;
use crate::synthgen::LabeledDataset;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("invalid ensemble parameters: {0}")]
    InvalidParams(String),
    #[error("ensemble size {0} must be odd and positive")]
    EvenSize(usize),
    #[error("error rate {0} outside [0, 1]")]
    InvalidEpsilon(f64),
    #[error("empty sample set")]
    Empty,
    #[error("prediction vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("ensemble build stopped with {} of {} members", .0.members.len(), .0.target)]
    BuildFailed(Box<BuildFailure>),
    #[error("model artifact: {0}")]
    Artifact(String),
    #[error("io: {0}")]
    Io(String),
}

/// A trained model, the feature it consumes and its held-out statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubClassifier {
    model: TrainedClassifier,
    feature: FeatureSpec,
    p_correct: f64,
    p_wrong: f64,
}

impl SubClassifier {
    /// `delta_false` is the held-out error rate.
    pub fn new(model: TrainedClassifier, feature: FeatureSpec, delta_false: f64) -> Result<Self, EnsembleError> {
        if !(0.0..=1.0).contains(&delta_false) {
            return Err(EnsembleError::InvalidEpsilon(delta_false));
        }
        Ok(SubClassifier {
            model,
            feature,
            p_correct: 1.0 - delta_false,
            p_wrong: delta_false,
        })
    }

    pub fn model(&self) -> &TrainedClassifier {
        &self.model
    }

    pub fn feature(&self) -> &FeatureSpec {
        &self.feature
    }

    pub fn delta_false(&self) -> f64 {
        self.p_wrong
    }

    pub fn p_correct(&self) -> f64 {
        self.p_correct
    }

    pub fn p_wrong(&self) -> f64 {
        self.p_wrong
    }

    pub fn predict(&self, x: &[f64]) -> Result<Label, EnsembleError> {
        Ok(self.model.predict(x)?)
    }
}

/// Odd-sized committee voting by the sign of the summed ±1 votes. Inputs
/// are rescaled to gray mean `lambda_avg` before feature extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    members: Vec<SubClassifier>,
    lambda_avg: f64,
}

impl EnsembleModel {
    pub fn new(members: Vec<SubClassifier>, lambda_avg: f64) -> Result<Self, EnsembleError> {
        if members.len() % 2 == 0 {
            return Err(EnsembleError::EvenSize(members.len()));
        }
        if !(lambda_avg > 0.0 && lambda_avg < 1.0) {
            return Err(EnsembleError::InvalidParams(format!("lambda_avg {lambda_avg} outside (0, 1)")));
        }
        for m in &members {
            m.feature.validate()?;
        }
        Ok(EnsembleModel { members, lambda_avg })
    }

    pub fn members(&self) -> &[SubClassifier] {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn lambda_avg(&self) -> f64 {
        self.lambda_avg
    }

    /// Normalizes a raw ROI crop, then votes.
    pub fn classify(&self, roi: &Image) -> Result<Label, EnsembleError> {
        let normalized = normalize_gray_mean(roi, self.lambda_avg)?;
        majority_vote(self, &normalized)
    }

    /// Per-member votes on a raw ROI crop, in member order.
    pub fn classify_votes(&self, roi: &Image) -> Result<Vec<Label>, EnsembleError> {
        let normalized = normalize_gray_mean(roi, self.lambda_avg)?;
        member_votes(self, &normalized)
    }
}

/// Each member's vote on an already normalized image. Members sharing a
/// feature spec share one extraction.
pub fn member_votes(m: &EnsembleModel, img: &Image) -> Result<Vec<Label>, EnsembleError> {
    let mut cache: HashMap<String, FeatureVector> = HashMap::new();
    let mut votes = Vec::with_capacity(m.members.len());
    for member in &m.members {
        let key = member.feature.tag();
        if !cache.contains_key(&key) {
            let v = extract(img, &member.feature)?;
            cache.insert(key.clone(), v);
        }
        votes.push(member.model.predict_vector(&cache[&key])?);
    }
    Ok(votes)
}

/// Sign of the vote sum.
pub fn vote(votes: &[Label]) -> Result<Label, EnsembleError> {
    if votes.len() % 2 == 0 {
        return Err(EnsembleError::EvenSize(votes.len()));
    }
    let sum: i32 = votes.iter().map(|v| v.sign()).sum();
    Ok(Label::from_score(f64::from(sum)))
}

/// Ensemble decision on an already normalized image.
pub fn majority_vote(m: &EnsembleModel, img: &Image) -> Result<Label, EnsembleError> {
    vote(&member_votes(m, img)?)
}

/// Probability that a majority of `t` independent voters, each wrong with
/// probability `epsilon`, is right: one minus the mass of at most `t / 2`
/// correct votes.
pub fn analytic_precision(epsilon: f64, t: usize) -> Result<f64, EnsembleError> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(EnsembleError::InvalidEpsilon(epsilon));
    }
    if t % 2 == 0 {
        return Err(EnsembleError::EvenSize(t));
    }
    let p = 1.0 - epsilon;
    let mut binom = 1.0;
    let mut error = 0.0;
    for k in 0..=t / 2 {
        if k > 0 {
            binom = binom * (t - k + 1) as f64 / k as f64;
        }
        error += binom * p.powi(k as i32) * epsilon.powi((t - k) as i32);
    }
    Ok(1.0 - error)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epsilon: f64,
    pub t: usize,
    pub precision: f64,
}

/// Grid of [`analytic_precision`], epsilon-major.
pub fn precision_curve(epsilons: &[f64], ts: &[usize]) -> Result<Vec<CurvePoint>, EnsembleError> {
    let mut out = Vec::with_capacity(epsilons.len() * ts.len());
    for &epsilon in epsilons {
        for &t in ts {
            out.push(CurvePoint {
                epsilon,
                t,
                precision: analytic_precision(epsilon, t)?,
            });
        }
    }
    Ok(out)
}

pub fn write_curve_csv(points: &[CurvePoint], out: impl Write) -> Result<(), EnsembleError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| EnsembleError::Io(e.to_string());
    w.write_record(["epsilon", "t", "precision"]).map_err(io)?;
    for p in points {
        w.write_record([p.epsilon.to_string(), p.t.to_string(), p.precision.to_string()])
            .map_err(io)?;
    }
    w.flush().map_err(|e| EnsembleError::Io(e.to_string()))
}

/// Fraction of positions where two prediction vectors differ.
pub fn disagreement(a: &[Label], b: &[Label]) -> Result<f64, EnsembleError> {
    if a.len() != b.len() {
        return Err(EnsembleError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EnsembleError::Empty);
    }
    let differ = a.iter().zip(b).filter(|(x, y)| x != y).count();
    Ok(differ as f64 / a.len() as f64)
}

/// Disagreement two independent predictors with these accuracies would
/// show: `wrong_a * correct_b + correct_a * wrong_b`.
pub fn expected_disagreement_from(p_correct_a: f64, p_correct_b: f64) -> f64 {
    (1.0 - p_correct_a) * p_correct_b + p_correct_a * (1.0 - p_correct_b)
}

pub fn expected_disagreement(a: &SubClassifier, b: &SubClassifier) -> f64 {
    a.p_wrong * b.p_correct + a.p_correct * b.p_wrong
}

/// Observed vs independence-implied disagreement of a predictor pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisagreementStats {
    pub empirical: f64,
    pub expected: f64,
    pub statistic: f64,
    /// Size of the sample the empirical value was measured on.
    pub n: usize,
}

impl DisagreementStats {
    pub fn new(empirical: f64, expected: f64, n: usize) -> Self {
        DisagreementStats {
            empirical,
            expected,
            statistic: (expected - empirical).abs(),
            n,
        }
    }

    /// From predictions on a shared sample and each predictor's held-out accuracy.
    pub fn from_predictions(
        preds_a: &[Label],
        preds_b: &[Label],
        p_correct_a: f64,
        p_correct_b: f64,
    ) -> Result<Self, EnsembleError> {
        let empirical = disagreement(preds_a, preds_b)?;
        Ok(Self::new(empirical, expected_disagreement_from(p_correct_a, p_correct_b), preds_a.len()))
    }

    pub fn passes(&self, theta_it: f64) -> bool {
        self.statistic < theta_it
    }
}

/// Predictions of one member on every sample of `d` (normalized with `lambda_avg`).
pub fn predict_dataset(s: &SubClassifier, d: &LabeledDataset, lambda_avg: f64) -> Result<Vec<Label>, EnsembleError> {
    (0..d.len())
        .map(|i| {
            let img = normalize_gray_mean(&d.image(i), lambda_avg)?;
            s.predict(extract(&img, &s.feature)?.values())
        })
        .collect()
}

pub fn empirical_disagreement(
    a: &SubClassifier,
    b: &SubClassifier,
    d_it: &LabeledDataset,
    lambda_avg: f64,
) -> Result<f64, EnsembleError> {
    if d_it.is_empty() {
        return Err(EnsembleError::Empty);
    }
    disagreement(&predict_dataset(a, d_it, lambda_avg)?, &predict_dataset(b, d_it, lambda_avg)?)
}

pub fn disagreement_stats(
    a: &SubClassifier,
    b: &SubClassifier,
    d_it: &LabeledDataset,
    lambda_avg: f64,
) -> Result<DisagreementStats, EnsembleError> {
    let empirical = empirical_disagreement(a, b, d_it, lambda_avg)?;
    Ok(DisagreementStats::new(empirical, expected_disagreement(a, b), d_it.len()))
}

/// True iff `|expected - empirical| < theta_it` on `d_it`.
pub fn independence_test(
    a: &SubClassifier,
    b: &SubClassifier,
    d_it: &LabeledDataset,
    lambda_avg: f64,
    theta_it: f64,
) -> Result<bool, EnsembleError> {
    Ok(disagreement_stats(a, b, d_it, lambda_avg)?.passes(theta_it))
}

/// Inputs of the selection loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleParams {
    /// Target ensemble size, odd.
    pub t: usize,
    pub theta_it: f64,
    pub delta_low: f64,
    pub delta_up: f64,
    pub alpha_train: f64,
    pub alpha_test: f64,
    /// Fraction of the dataset drawn for each pairwise test.
    pub beta: f64,
    pub min_it_samples: usize,
    pub n_max_pool: usize,
    /// Gray-mean target applied to every sample before feature extraction.
    pub lambda_avg: f64,
    /// Where pairwise-test samples come from.
    pub it_source: ItSource,
    pub seed: u64,
}

/// Population the pairwise-test samples are drawn from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItSource {
    /// The whole training dataset, train portion included.
    #[default]
    Dataset,
    /// Only the held-out portion, which no candidate was fitted on.
    HeldOut,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        EnsembleParams {
            t: 7,
            theta_it: 0.05,
            delta_low: 0.001,
            delta_up: 0.5,
            alpha_train: 0.6,
            alpha_test: 0.4,
            beta: 0.3,
            min_it_samples: 200,
            n_max_pool: 100,
            lambda_avg: 0.5,
            it_source: ItSource::Dataset,
            seed: 0,
        }
    }
}

impl EnsembleParams {
    pub fn validate(&self) -> Result<(), EnsembleError> {
        let bad = |m: String| Err(EnsembleError::InvalidParams(m));
        if self.t % 2 == 0 {
            return Err(EnsembleError::EvenSize(self.t));
        }
        if !(self.theta_it > 0.0 && self.theta_it.is_finite()) {
            return bad(format!("theta_it {} must be positive", self.theta_it));
        }
        if !(0.0 <= self.delta_low && self.delta_low < self.delta_up && self.delta_up <= 0.5) {
            return bad(format!(
                "error band ({}, {}) must satisfy 0 <= low < up <= 0.5",
                self.delta_low, self.delta_up
            ));
        }
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.alpha_train) || !unit(self.alpha_test) || self.alpha_train + self.alpha_test > 1.0 + 1e-12 {
            return bad(format!(
                "split fractions ({}, {}) must lie in (0, 1) and sum to at most 1",
                self.alpha_train, self.alpha_test
            ));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad(format!("beta {} outside (0, 1]", self.beta));
        }
        if self.n_max_pool == 0 {
            return bad("n_max_pool must be positive".into());
        }
        if !unit(self.lambda_avg) {
            return bad(format!("lambda_avg {} outside (0, 1)", self.lambda_avg));
        }
        Ok(())
    }

    /// Size of each pairwise test sample drawn from `n` items.
    pub fn it_size(&self, n: usize) -> usize {
        ((self.beta * n as f64).ceil() as usize).max(self.min_it_samples).min(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::{fit_rows, ClassifierConfig};
    use proptest::prelude::*;

    fn member(delta: f64) -> SubClassifier {
        let xs = [[0.0], [1.0]];
        let rows: Vec<&[f64]> = xs.iter().map(|r| r.as_slice()).collect();
        let model = fit_rows(&ClassifierConfig::Knn { k: 1 }, &rows, &[Label::Defective, Label::Qualified]).unwrap();
        SubClassifier::new(model, FeatureSpec::Raw { scale: 1.0 }, delta).unwrap()
    }

    #[test]
    fn vote_examples() {
        use Label::*;
        assert_eq!(vote(&[Qualified]).unwrap(), Qualified);
        assert_eq!(vote(&[Qualified, Qualified, Defective]).unwrap(), Qualified);
        let seven = [Defective, Defective, Defective, Defective, Qualified, Qualified, Qualified];
        assert_eq!(vote(&seven).unwrap(), Defective);
        assert!(vote(&[Qualified, Defective]).is_err());
    }

    #[test]
    fn precision_examples() {
        for t in [1, 3, 5, 7, 9, 11] {
            assert!((analytic_precision(0.5, t).unwrap() - 0.5).abs() < 1e-12);
        }
        assert!((analytic_precision(0.3, 1).unwrap() - 0.7).abs() < 1e-12);
        assert!((analytic_precision(0.3, 3).unwrap() - 0.784).abs() < 1e-12);
        assert_eq!(analytic_precision(0.0, 5).unwrap(), 1.0);
        assert_eq!(analytic_precision(1.0, 5).unwrap(), 0.0);
        assert!(analytic_precision(1.2, 3).is_err());
        assert!(analytic_precision(0.2, 4).is_err());
    }

    #[test]
    fn curve_rows_and_csv() {
        let pts = precision_curve(&[0.3, 0.5], &[1, 3, 7]).unwrap();
        assert_eq!(pts.len(), 6);
        assert!(pts[2].precision > pts[1].precision && pts[1].precision > pts[0].precision);
        assert!(pts[3..].iter().all(|p| (p.precision - 0.5).abs() < 1e-12));
        let mut buf = Vec::new();
        write_curve_csv(&pts, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epsilon,t,precision\n0.3,1,"));
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn expected_disagreement_examples() {
        assert_eq!(expected_disagreement_from(1.0, 1.0), 0.0);
        assert!((expected_disagreement_from(0.9, 0.8) - 0.26).abs() < 1e-12);
        let (a, b) = (member(0.1), member(0.25));
        assert_eq!(expected_disagreement(&a, &b), expected_disagreement(&b, &a));
    }

    #[test]
    fn clone_statistic() {
        let preds: Vec<Label> = (0..50).map(|i| Label::from_score(f64::from(i % 3) - 1.0)).collect();
        let s = DisagreementStats::from_predictions(&preds, &preds, 0.8, 0.8).unwrap();
        assert_eq!(s.empirical, 0.0);
        assert!((s.statistic - 0.32).abs() < 1e-12);
        assert!(!s.passes(0.05));
        let perfect = DisagreementStats::from_predictions(&preds, &preds, 1.0, 1.0).unwrap();
        assert!(perfect.passes(0.05));
    }

    #[test]
    fn disagreement_examples() {
        use Label::*;
        let a = [Qualified, Defective, Qualified, Qualified];
        let neg: Vec<Label> = a.iter().map(|l| l.flipped()).collect();
        assert_eq!(disagreement(&a, &a).unwrap(), 0.0);
        assert_eq!(disagreement(&a, &neg).unwrap(), 1.0);
        assert!(disagreement(&[], &[]).is_err());
        assert!(disagreement(&a, &a[..2]).is_err());
    }

    #[test]
    fn model_rejects_even_size() {
        assert!(EnsembleModel::new(vec![member(0.1), member(0.1)], 0.5).is_err());
        assert!(EnsembleModel::new(vec![member(0.1)], 1.0).is_err());
        let m = EnsembleModel::new(vec![member(0.1)], 0.5).unwrap();
        assert_eq!(m.size(), 1);
        assert!(SubClassifier::new(m.members()[0].model().clone(), FeatureSpec::DEFAULT_RAW, 1.5).is_err());
    }

    #[test]
    fn single_member_vote_is_member_prediction() {
        let m = EnsembleModel::new(vec![member(0.1)], 0.5).unwrap();
        for v in [0.1, 0.9] {
            let img = Image::filled(1, 1, v);
            let direct = m.members()[0].predict(&[v]).unwrap();
            assert_eq!(majority_vote(&m, &img).unwrap(), direct);
        }
    }

    #[test]
    fn params_validation() {
        EnsembleParams::default().validate().unwrap();
        let p = EnsembleParams { t: 4, ..Default::default() };
        assert!(p.validate().is_err());
        let p = EnsembleParams { delta_up: 0.6, ..Default::default() };
        assert!(p.validate().is_err());
        let p = EnsembleParams { alpha_train: 0.7, ..Default::default() };
        assert!(p.validate().is_err());
        assert_eq!(EnsembleParams::default().it_size(2000), 600);
        assert_eq!(EnsembleParams::default().it_size(300), 200);
        assert_eq!(EnsembleParams::default().it_size(150), 150);
    }

    proptest! {
        #[test]
        fn complement_symmetry(eps in 0.0f64..=1.0, half in 0usize..8) {
            let t = 2 * half + 1;
            let s = analytic_precision(eps, t).unwrap() + analytic_precision(1.0 - eps, t).unwrap();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }

        #[test]
        fn decreasing_in_epsilon(a in 0.001f64..0.999, b in 0.001f64..0.999, half in 0usize..8) {
            prop_assume!((a - b).abs() > 1e-6);
            let t = 2 * half + 1;
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(analytic_precision(lo, t).unwrap() > analytic_precision(hi, t).unwrap());
        }

        #[test]
        fn vote_permutation_and_sign(raw in prop::collection::vec(any::<bool>(), 1..8usize), rot in 0usize..8) {
            let mut votes: Vec<Label> = raw.iter().map(|&b| if b { Label::Qualified } else { Label::Defective }).collect();
            if votes.len() % 2 == 0 { votes.pop(); }
            let h = vote(&votes).unwrap();
            let mut rotated = votes.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            prop_assert_eq!(vote(&rotated).unwrap(), h);
            let flipped: Vec<Label> = votes.iter().map(|l| l.flipped()).collect();
            prop_assert_eq!(vote(&flipped).unwrap(), h.flipped());
        }

        #[test]
        fn disagreement_pseudometric(
            a in prop::collection::vec(any::<bool>(), 1..40usize),
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut rng = crate::seed::rng(seed);
            let to = |v: &[bool]| v.iter().map(|&b| if b { Label::Qualified } else { Label::Defective }).collect::<Vec<_>>();
            let b: Vec<bool> = (0..a.len()).map(|_| rng.random()).collect();
            let c: Vec<bool> = (0..a.len()).map(|_| rng.random()).collect();
            let (a, b, c) = (to(&a), to(&b), to(&c));
            let ab = disagreement(&a, &b).unwrap();
            prop_assert_eq!(ab, disagreement(&b, &a).unwrap());
            prop_assert_eq!(disagreement(&a, &a).unwrap(), 0.0);
            prop_assert!(disagreement(&a, &c).unwrap() <= ab + disagreement(&b, &c).unwrap() + 1e-12);
        }

        #[test]
        fn clones_fail_when_forced(p in 0.0f64..=1.0) {
            let preds = vec![Label::Qualified; 10];
            let s = DisagreementStats::from_predictions(&preds, &preds, p, p).unwrap();
            prop_assert_eq!(s.passes(0.05), 2.0 * p * (1.0 - p) < 0.05);
        }
    }
}
