//! Candidate training and the draw / gate / independence-test selection loop.
//!
//! The train/held-out split is drawn once per build from the parameter seed
//! and shared by every candidate, so a pool entry trains to the same model
//! however often it is drawn; repeated draws are exact clones and face the
//! independence test like any other candidate.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DisagreementStats, EnsembleError, EnsembleModel, EnsembleParams, ItSource, SubClassifier};
use crate::classifiers::{fit_rows, ClassifierConfig, ClassifierError};
use crate::features::{extract, FeatureSpec};
use crate::imaging::normalize_gray_mean;
use crate::label::Label;
use crate::seed;
use crate::synthgen::LabeledDataset;

/// Row-major feature vectors of one spec over a whole dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.values.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Lazily extracted feature matrices over one dataset, one per spec.
pub struct FeatureBank<'d> {
    data: &'d LabeledDataset,
    lambda_avg: f64,
    matrices: Vec<(FeatureSpec, Arc<FeatureMatrix>)>,
}

impl<'d> FeatureBank<'d> {
    pub fn new(data: &'d LabeledDataset, lambda_avg: f64) -> Self {
        FeatureBank {
            data,
            lambda_avg,
            matrices: Vec::new(),
        }
    }

    pub fn data(&self) -> &'d LabeledDataset {
        self.data
    }

    pub fn lambda_avg(&self) -> f64 {
        self.lambda_avg
    }

    /// A bank over `data` that reuses every matrix extracted so far. `data`
    /// must hold the same images in the same order; labels may differ.
    pub fn relabeled<'e>(&self, data: &'e LabeledDataset) -> Result<FeatureBank<'e>, EnsembleError> {
        let same = data.len() == self.data.len()
            && data.width() == self.data.width()
            && data.height() == self.data.height()
            && data.items().iter().zip(self.data.items()).all(|(a, b)| a.pixels() == b.pixels());
        if !same {
            return Err(EnsembleError::InvalidParams("relabeled dataset holds different images".into()));
        }
        Ok(FeatureBank {
            data,
            lambda_avg: self.lambda_avg,
            matrices: self.matrices.clone(),
        })
    }

    /// Features of every sample after gray-mean normalization.
    pub fn matrix(&mut self, spec: &FeatureSpec) -> Result<Arc<FeatureMatrix>, EnsembleError> {
        if let Some((_, m)) = self.matrices.iter().find(|(s, _)| s == spec) {
            return Ok(Arc::clone(m));
        }
        spec.validate()?;
        let dim = spec.dim(self.data.width(), self.data.height());
        let mut values = Vec::with_capacity(dim * self.data.len());
        for i in 0..self.data.len() {
            let img = normalize_gray_mean(&self.data.image(i), self.lambda_avg)?;
            values.extend_from_slice(extract(&img, spec)?.values());
        }
        let m = Arc::new(FeatureMatrix { dim, values });
        self.matrices.push((*spec, Arc::clone(&m)));
        Ok(m)
    }
}

/// Seeded split of `0..n` into sorted train and held-out index lists of
/// `round(alpha_train * n)` and `round(alpha_test * n)` items.
pub fn split_indices(n: usize, p: &EnsembleParams) -> (Vec<usize>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(seed::derive(p.seed, "split")));
    let n_train = ((p.alpha_train * n as f64).round() as usize).min(n);
    let n_test = ((p.alpha_test * n as f64).round() as usize).min(n - n_train);
    let mut train = perm[..n_train].to_vec();
    let mut test = perm[n_train..n_train + n_test].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Why a trained candidate did not enter the ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Rejection {
    /// The training portion held a single class (or too few samples).
    DegenerateSplit { detail: String },
    /// Held-out error at or below `delta_low`.
    BelowBand { delta_false: f64 },
    /// Held-out error at or above `delta_up`.
    AboveBand { delta_false: f64 },
}

/// Outcome of training one pool entry.
pub type Candidate = Result<SubClassifier, Rejection>;

fn gate(sub: SubClassifier, p: &EnsembleParams) -> Candidate {
    let e = sub.delta_false();
    if e <= p.delta_low {
        Err(Rejection::BelowBand { delta_false: e })
    } else if e >= p.delta_up {
        Err(Rejection::AboveBand { delta_false: e })
    } else {
        Ok(sub)
    }
}

/// Fits on the train indices and measures the error on the held-out ones.
/// Returns the held-out predictions alongside so callers can cache them.
fn fit_on_split(
    bank: &mut FeatureBank<'_>,
    train: &[usize],
    test: &[usize],
    cfg: &ClassifierConfig,
    spec: &FeatureSpec,
) -> Result<Result<(SubClassifier, Vec<Label>), Rejection>, EnsembleError> {
    let data = bank.data();
    let m = bank.matrix(spec)?;
    let rows: Vec<&[f64]> = train.iter().map(|&i| m.row(i)).collect();
    let ys: Vec<Label> = train.iter().map(|&i| data.item(i).label).collect();
    let model = match fit_rows(cfg, &rows, &ys) {
        Ok(model) => model,
        Err(ClassifierError::DegenerateTrainingSet(detail)) => return Ok(Err(Rejection::DegenerateSplit { detail })),
        Err(e) => return Err(e.into()),
    };
    if test.is_empty() {
        return Err(EnsembleError::InvalidParams("held-out split is empty".into()));
    }
    let mut preds = Vec::with_capacity(test.len());
    let mut wrong = 0usize;
    for &i in test {
        let y = model.predict(m.row(i))?;
        wrong += usize::from(y != data.item(i).label);
        preds.push(y);
    }
    let delta_false = wrong as f64 / test.len() as f64;
    Ok(Ok((SubClassifier::new(model, *spec, delta_false)?, preds)))
}

/// Fits `cfg` on the `alpha_train` portion of `d`, measures the held-out
/// error on the `alpha_test` portion and applies the `(delta_low, delta_up)` gate.
pub fn train_candidate(
    cfg: &ClassifierConfig,
    spec: &FeatureSpec,
    d: &LabeledDataset,
    p: &EnsembleParams,
) -> Result<Candidate, EnsembleError> {
    p.validate()?;
    let (train, test) = split_indices(d.len(), p);
    let mut bank = FeatureBank::new(d, p.lambda_avg);
    Ok(fit_on_split(&mut bank, &train, &test, cfg, spec)?.and_then(|(sub, _)| gate(sub, p)))
}

/// Fits `cfg` on the train split of `bank`'s dataset and reports the
/// held-out statistics without applying the error gate.
pub fn fit_candidate_in(
    bank: &mut FeatureBank<'_>,
    cfg: &ClassifierConfig,
    spec: &FeatureSpec,
    p: &EnsembleParams,
) -> Result<Candidate, EnsembleError> {
    p.validate()?;
    let (train, test) = split_indices(bank.data().len(), p);
    Ok(fit_on_split(bank, &train, &test, cfg, spec)?.map(|(sub, _)| sub))
}

/// One accepted pair's test result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    /// Member positions in the final ensemble, `earlier < later`.
    pub earlier: usize,
    pub later: usize,
    pub stats: DisagreementStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum DrawOutcome {
    Accepted { member: usize, delta_false: f64 },
    Rejected(Rejection),
    /// Failed the pairwise test against the member at this position.
    IndependenceFail { against: usize, stats: DisagreementStats },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub draw: usize,
    pub pool_index: usize,
    pub outcome: DrawOutcome,
}

/// What happened during a build.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub draws: usize,
    pub log: Vec<DrawRecord>,
    /// Pool index of each member, in acceptance order.
    pub member_pool_indices: Vec<usize>,
    pub gate_rejections: usize,
    pub degenerate_rejections: usize,
    pub it_rejections: usize,
    pub it_tests: usize,
    pub pairs: Vec<PairRecord>,
    /// Share of pairwise-test samples that were also training samples.
    pub it_train_overlap: f64,
}

/// Members gathered before the draw budget ran out.
#[derive(Debug)]
pub struct BuildFailure {
    pub members: Vec<SubClassifier>,
    pub target: usize,
    pub report: BuildReport,
}

struct Slot {
    candidate: Result<SubClassifier, Rejection>,
    /// Cached predictions over the whole dataset, filled on demand.
    preds: Vec<Option<Label>>,
}

/// Trained pool entries keyed by pool index, reusable across builds that
/// share dataset, pool, split and seed (for example a sweep over `t`).
#[derive(Default)]
pub struct CandidateCache {
    key: Option<(Vec<(ClassifierConfig, FeatureSpec)>, u64, u64, u64, u64, usize)>,
    slots: Vec<Option<Slot>>,
}

impl CandidateCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of pool entries trained so far.
    pub fn trained(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    fn reset_if_stale(&mut self, pool: &[(ClassifierConfig, FeatureSpec)], p: &EnsembleParams, n: usize) {
        let key = (
            pool.to_vec(),
            p.seed,
            p.alpha_train.to_bits(),
            p.alpha_test.to_bits(),
            p.lambda_avg.to_bits(),
            n,
        );
        if self.key.as_ref() != Some(&key) {
            self.key = Some(key);
            self.slots = (0..pool.len()).map(|_| None).collect();
        }
    }
}

fn ensure_slot<'c>(
    cache: &'c mut CandidateCache,
    bank: &mut FeatureBank<'_>,
    pool: &[(ClassifierConfig, FeatureSpec)],
    idx: usize,
    train: &[usize],
    test: &[usize],
) -> Result<&'c mut Slot, EnsembleError> {
    if cache.slots[idx].is_none() {
        let (cfg, spec) = &pool[idx];
        let mut preds = vec![None; bank.data().len()];
        let candidate = fit_on_split(bank, train, test, cfg, spec)?.map(|(sub, held_out)| {
            for (&i, y) in test.iter().zip(held_out) {
                preds[i] = Some(y);
            }
            sub
        });
        cache.slots[idx] = Some(Slot { candidate, preds });
    }
    Ok(cache.slots[idx].as_mut().expect("slot filled above"))
}

fn predictions_on(
    cache: &mut CandidateCache,
    bank: &mut FeatureBank<'_>,
    idx: usize,
    spec: &FeatureSpec,
    sample_ids: &[usize],
) -> Result<Vec<Label>, EnsembleError> {
    let m = bank.matrix(spec)?;
    let slot = cache.slots[idx].as_mut().expect("candidate trained before testing");
    let sub = slot.candidate.as_ref().expect("only accepted candidates are tested");
    let mut out = Vec::with_capacity(sample_ids.len());
    for &i in sample_ids {
        let y = match slot.preds[i] {
            Some(y) => y,
            None => {
                let y = sub.predict(m.row(i))?;
                slot.preds[i] = Some(y);
                y
            }
        };
        out.push(y);
    }
    Ok(out)
}

/// Selection loop over `pool` with features drawn from `bank`.
pub fn build_ensemble_in(
    bank: &mut FeatureBank<'_>,
    pool: &[(ClassifierConfig, FeatureSpec)],
    p: &EnsembleParams,
    cache: &mut CandidateCache,
) -> Result<(EnsembleModel, BuildReport), EnsembleError> {
    p.validate()?;
    if pool.is_empty() {
        return Err(EnsembleError::InvalidParams("empty candidate pool".into()));
    }
    if (bank.lambda_avg() - p.lambda_avg).abs() > 0.0 {
        return Err(EnsembleError::InvalidParams(format!(
            "feature bank normalizes to {} but params ask for {}",
            bank.lambda_avg(),
            p.lambda_avg
        )));
    }
    let n = bank.data().len();
    if n < 2 {
        return Err(EnsembleError::Empty);
    }
    cache.reset_if_stale(pool, p, n);
    let (train, test) = split_indices(n, p);
    let mut in_train = vec![false; n];
    train.iter().for_each(|&i| in_train[i] = true);
    let population: Vec<usize> = match p.it_source {
        ItSource::Dataset => (0..n).collect(),
        ItSource::HeldOut => test.clone(),
    };
    let it_size = p.it_size(population.len());

    let mut draw_rng = seed::rng(seed::derive(p.seed, "draws"));
    let mut it_rng = seed::rng(seed::derive(p.seed, "independence"));
    let mut members: Vec<usize> = Vec::new();
    let mut report = BuildReport::default();
    let mut overlap = 0usize;
    let mut it_samples = 0usize;

    for draw in 0..p.n_max_pool {
        if members.len() == p.t {
            break;
        }
        let idx = draw_rng.random_range(0..pool.len());
        report.draws += 1;
        let slot = ensure_slot(cache, bank, pool, idx, &train, &test)?;
        let sub = match slot.candidate.clone().and_then(|s| gate(s, p)) {
            Ok(sub) => sub,
            Err(r) => {
                if matches!(r, Rejection::DegenerateSplit { .. }) {
                    report.degenerate_rejections += 1;
                } else {
                    report.gate_rejections += 1;
                }
                report.log.push(DrawRecord {
                    draw,
                    pool_index: idx,
                    outcome: DrawOutcome::Rejected(r),
                });
                continue;
            }
        };

        let mut pending = Vec::with_capacity(members.len());
        let mut failed = None;
        for (pos, &m) in members.iter().enumerate() {
            let mut ids: Vec<usize> = sample(&mut it_rng, population.len(), it_size)
                .into_iter()
                .map(|k| population[k])
                .collect();
            ids.sort_unstable();
            overlap += ids.iter().filter(|&&i| in_train[i]).count();
            it_samples += ids.len();
            let member_spec = pool[m].1;
            let pm = predictions_on(cache, bank, m, &member_spec, &ids)?;
            let pc = predictions_on(cache, bank, idx, &pool[idx].1, &ids)?;
            let member_sub = cache.slots[m]
                .as_ref()
                .and_then(|s| s.candidate.as_ref().ok())
                .expect("members are accepted candidates");
            let stats = DisagreementStats::from_predictions(&pm, &pc, member_sub.p_correct(), sub.p_correct())?;
            report.it_tests += 1;
            if !stats.passes(p.theta_it) {
                failed = Some((pos, stats));
                break;
            }
            pending.push(PairRecord {
                earlier: pos,
                later: members.len(),
                stats,
            });
        }
        match failed {
            Some((against, stats)) => {
                report.it_rejections += 1;
                report.log.push(DrawRecord {
                    draw,
                    pool_index: idx,
                    outcome: DrawOutcome::IndependenceFail { against, stats },
                });
            }
            None => {
                report.log.push(DrawRecord {
                    draw,
                    pool_index: idx,
                    outcome: DrawOutcome::Accepted {
                        member: members.len(),
                        delta_false: sub.delta_false(),
                    },
                });
                report.pairs.extend(pending);
                members.push(idx);
            }
        }
    }

    report.member_pool_indices = members.clone();
    report.it_train_overlap = if it_samples == 0 {
        0.0
    } else {
        overlap as f64 / it_samples as f64
    };
    let subs: Vec<SubClassifier> = members
        .iter()
        .map(|&m| {
            cache.slots[m]
                .as_ref()
                .and_then(|s| s.candidate.clone().ok())
                .expect("members are accepted candidates")
        })
        .collect();
    if subs.len() < p.t {
        return Err(EnsembleError::BuildFailed(Box::new(BuildFailure {
            members: subs,
            target: p.t,
            report,
        })));
    }
    Ok((EnsembleModel::new(subs, p.lambda_avg)?, report))
}

/// Builds an ensemble of `p.t` members from `pool` over dataset `d`.
pub fn build_ensemble(
    d: &LabeledDataset,
    pool: &[(ClassifierConfig, FeatureSpec)],
    p: &EnsembleParams,
) -> Result<(EnsembleModel, BuildReport), EnsembleError> {
    let mut bank = FeatureBank::new(d, p.lambda_avg);
    build_ensemble_in(&mut bank, pool, p, &mut CandidateCache::new())
}
