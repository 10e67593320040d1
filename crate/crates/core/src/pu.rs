//! Positive-unlabeled machinery: valid-example matching, label-frequency
//! estimation and recovery of unbiased predicate probabilities.
//!
//! A model trained with unannotated pairs treated as "no relationship"
//! predicts the biased probability `P(s = r | x)`. Under the SCAR labeling
//! assumption this equals `c_r * P(y = r | x)`, where `c_r` is the label
//! frequency of class `r`. Estimating `c` and dividing it back out recovers
//! the unbiased distribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ObjectInstance, SceneGraph};

/// IoU a proposal box needs against its ground-truth box to count as a
/// valid example (inclusive).
pub const VALID_EXAMPLE_IOU: f64 = 0.5;

/// Momentum used for the moving-average estimator unless told otherwise.
pub const DEFAULT_MOMENTUM: f64 = 0.1;

const PROB_TOLERANCE: f64 = 1e-6;

/// Predicted predicate distribution for one ordered object pair.
///
/// `pred_probs[r - 1]` is the probability of foreground class `r`;
/// `bg_prob`, when present, is the "no relationship" probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPrediction {
    pub subj: ObjectInstance,
    pub obj: ObjectInstance,
    pub pred_probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bg_prob: Option<f64>,
}

impl PairPrediction {
    pub fn num_predicates(&self) -> usize {
        self.pred_probs.len()
    }

    /// Probability of 1-based class `r`.
    pub fn prob(&self, r: usize) -> f64 {
        self.pred_probs[r - 1]
    }

    /// Checks the probability invariants against a tolerance on the total.
    pub fn check(&self, num_predicates: usize, sum_tolerance: f64) -> Result<()> {
        if self.pred_probs.len() != num_predicates {
            return Err(Error::data(format!(
                "pred_probs has length {}, expected {num_predicates}",
                self.pred_probs.len()
            )));
        }
        let all = self.pred_probs.iter().chain(self.bg_prob.iter());
        if let Some(bad) = all.clone().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::data(format!("probability {bad} outside [0, 1]")));
        }
        let total: f64 = all.sum();
        match self.bg_prob {
            Some(_) if (total - 1.0).abs() > sum_tolerance => {
                Err(Error::data(format!("pred_probs and bg_prob sum to {total}, expected 1")))
            }
            None if total > 1.0 + sum_tolerance => {
                Err(Error::data(format!("pred_probs sum to {total}, expected at most 1")))
            }
            _ => Ok(()),
        }
    }

    pub fn validate(&self, num_predicates: usize) -> Result<()> {
        self.check(num_predicates, PROB_TOLERANCE)
    }
}

/// Every scored pair predicted for one image (or one training batch slot).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerImagePredictions {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_id: Option<u64>,
    pub pairs: Vec<PairPrediction>,
}

/// A predicted pair whose boxes and labels match an annotated pair, tagged
/// with that annotation's predicate.
#[derive(Debug, Clone, Copy)]
pub struct ValidExample<'a> {
    pub image_id: &'a str,
    pub pair_index: usize,
    pub pair: &'a PairPrediction,
    pub label: usize,
}

impl ValidExample<'_> {
    /// The biased probability the model assigns to the example's own label.
    pub fn biased_prob(&self) -> f64 {
        self.pair.prob(self.label)
    }
}

fn matches_object(pred: &ObjectInstance, gt: &ObjectInstance) -> bool {
    pred.label == gt.label && pred.bbox.iou(&gt.bbox) >= VALID_EXAMPLE_IOU
}

/// Collects every (annotated relation, predicted pair) match.
///
/// A pair matches when both its subject and object carry the annotated
/// labels and overlap the annotated boxes with IoU >= 0.5. One annotation
/// may match several predicted pairs; each match is its own example.
pub fn match_valid_pairs<'a>(predictions: &'a PerImagePredictions, gt: &SceneGraph) -> Result<Vec<ValidExample<'a>>> {
    if predictions.image_id != gt.image_id {
        return Err(Error::usage(format!(
            "predictions for image {:?} paired with ground truth for {:?}",
            predictions.image_id, gt.image_id
        )));
    }
    let mut out = Vec::new();
    for rel in &gt.relations {
        let (Some(gs), Some(go)) = (gt.objects.get(rel.subj), gt.objects.get(rel.obj)) else {
            return Err(Error::data(format!("relation {rel:?} addresses a missing object")));
        };
        for (pair_index, pair) in predictions.pairs.iter().enumerate() {
            if matches_object(&pair.subj, gs) && matches_object(&pair.obj, go) {
                if rel.pred == 0 || rel.pred > pair.num_predicates() {
                    return Err(Error::data(format!(
                        "relation predicate {} outside the {} predicted classes",
                        rel.pred,
                        pair.num_predicates()
                    )));
                }
                out.push(ValidExample { image_id: &predictions.image_id, pair_index, pair, label: rel.pred });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    TrainEst,
    Dlfe,
}

/// Per-class label frequencies `c_r = P(s = r | y = r)`.
///
/// `c[r - 1]` is `None` while class `r` has no valid example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFrequencyEstimate {
    pub estimator: Estimator,
    pub alpha: Option<f64>,
    pub mode: Option<String>,
    pub c: Vec<Option<f64>>,
    pub valid_counts: Vec<u64>,
}

impl LabelFrequencyEstimate {
    /// An estimate with every class set to the given frequencies.
    pub fn from_values(estimator: Estimator, c: &[f64]) -> Self {
        LabelFrequencyEstimate {
            estimator,
            alpha: None,
            mode: None,
            c: c.iter().copied().map(Some).collect(),
            valid_counts: vec![0; c.len()],
        }
    }

    pub fn num_predicates(&self) -> usize {
        self.c.len()
    }

    pub fn is_complete(&self) -> bool {
        self.c.iter().all(Option::is_some)
    }

    pub fn with_mode(mut self, mode: impl Into<String>) -> Self {
        self.mode = Some(mode.into());
        self
    }

    /// The frequencies as plain numbers; fails if any is unset or not positive.
    pub fn values(&self) -> Result<Vec<f64>> {
        self.c
            .iter()
            .enumerate()
            .map(|(i, c)| match c {
                Some(v) if *v > 0.0 && v.is_finite() => Ok(*v),
                Some(v) => Err(Error::data(format!("label frequency of class {} is {v}", i + 1))),
                None => Err(Error::data(format!("label frequency of class {} is unset", i + 1))),
            })
            .collect()
    }
}

/// Streaming form of the offline estimator: averages the biased probability
/// of each class over its valid examples.
#[derive(Debug, Clone)]
pub struct TrainEst {
    sums: Vec<f64>,
    counts: Vec<u64>,
}

impl TrainEst {
    pub fn new(num_predicates: usize) -> Self {
        TrainEst { sums: vec![0.0; num_predicates], counts: vec![0; num_predicates] }
    }

    pub fn observe(&mut self, example: &ValidExample<'_>) {
        let i = example.label - 1;
        self.sums[i] += example.biased_prob();
        self.counts[i] += 1;
    }

    /// Adds per-class sums of biased probabilities and example counts.
    pub fn add_sums(&mut self, sums: &[f64], counts: &[u64]) {
        for r in 0..self.sums.len() {
            self.sums[r] += sums[r];
            self.counts[r] += counts[r];
        }
    }

    pub fn finish(self) -> LabelFrequencyEstimate {
        let c = self.sums.iter().zip(&self.counts).map(|(&s, &n)| (n > 0).then(|| s / n as f64)).collect();
        LabelFrequencyEstimate { estimator: Estimator::TrainEst, alpha: None, mode: None, c, valid_counts: self.counts }
    }
}

pub fn train_est<'a, I>(examples: I, num_predicates: usize) -> LabelFrequencyEstimate
where
    I: IntoIterator<Item = &'a ValidExample<'a>>,
{
    let mut acc = TrainEst::new(num_predicates);
    for ex in examples {
        acc.observe(ex);
    }
    acc.finish()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Replaces unset classes with the median of the set ones.
pub fn fill_missing(estimate: &LabelFrequencyEstimate) -> Result<LabelFrequencyEstimate> {
    let mut set: Vec<f64> = estimate.c.iter().flatten().copied().collect();
    if set.is_empty() {
        return Err(Error::data("cannot fill label frequencies: no class has an estimate"));
    }
    let fill = median(&mut set);
    let mut out = estimate.clone();
    for c in out.c.iter_mut().filter(|c| c.is_none()) {
        *c = Some(fill);
    }
    Ok(out)
}

/// Moving-average label-frequency estimator fed with training batches.
///
/// For each class present in a batch, the batch mean `m` of the biased
/// probabilities of its valid examples updates the running value as
/// `alpha * m + (1 - alpha) * running`. The first observation of a class
/// seeds the running value directly. Classes absent from a batch are left
/// untouched. Updates are order-sensitive, so one state must see batches
/// in a fixed sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct DlfeState {
    alpha: f64,
    running: Vec<Option<f64>>,
    batches_seen: Vec<u64>,
    valid_counts: Vec<u64>,
    total_batches: u64,
}

impl DlfeState {
    pub fn new(num_predicates: usize, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::usage(format!("momentum must lie in (0, 1], got {alpha}")));
        }
        Ok(DlfeState {
            alpha,
            running: vec![None; num_predicates],
            batches_seen: vec![0; num_predicates],
            valid_counts: vec![0; num_predicates],
            total_batches: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Current running estimate per class.
    pub fn running(&self) -> &[Option<f64>] {
        &self.running
    }

    /// Number of batches that updated each class.
    pub fn batches_seen(&self) -> &[u64] {
        &self.batches_seen
    }

    pub fn total_batches(&self) -> u64 {
        self.total_batches
    }

    /// Folds one batch of valid examples into the running estimate.
    pub fn update<'a, I>(&mut self, batch: I)
    where
        I: IntoIterator<Item = &'a ValidExample<'a>>,
    {
        let k = self.running.len();
        let mut sums = vec![0.0; k];
        let mut counts = vec![0u64; k];
        for ex in batch {
            sums[ex.label - 1] += ex.biased_prob();
            counts[ex.label - 1] += 1;
        }
        self.update_with_sums(&sums, &counts);
    }

    /// Same as [`DlfeState::update`] with the per-class sums already
    /// accumulated.
    pub fn update_with_sums(&mut self, sums: &[f64], counts: &[u64]) {
        self.total_batches += 1;
        for r in 0..self.running.len() {
            if counts[r] == 0 {
                continue;
            }
            let batch_mean = sums[r] / counts[r] as f64;
            self.running[r] = Some(match self.running[r] {
                None => batch_mean,
                Some(prev) => self.alpha * batch_mean + (1.0 - self.alpha) * prev,
            });
            self.batches_seen[r] += 1;
            self.valid_counts[r] += counts[r];
        }
    }

    pub fn finalize(&self) -> Result<LabelFrequencyEstimate> {
        if self.total_batches == 0 {
            return Err(Error::data("moving-average estimator has not seen any batch"));
        }
        if self.running.iter().all(Option::is_none) {
            return Err(Error::data("moving-average estimator saw no valid example"));
        }
        Ok(LabelFrequencyEstimate {
            estimator: Estimator::Dlfe,
            alpha: Some(self.alpha),
            mode: None,
            c: self.running.clone(),
            valid_counts: self.valid_counts.clone(),
        })
    }
}

/// Divides biased probabilities by validated label frequencies.
#[derive(Debug, Clone)]
pub struct Debiaser {
    inv_c: Vec<f64>,
    renormalize: bool,
}

impl Debiaser {
    pub fn new(estimate: &LabelFrequencyEstimate, renormalize: bool) -> Result<Self> {
        let inv_c = estimate.values()?.into_iter().map(|c| 1.0 / c).collect();
        Ok(Debiaser { inv_c, renormalize })
    }

    pub fn recover_probs(&self, probs: &[f64]) -> Result<Vec<f64>> {
        if probs.len() != self.inv_c.len() {
            return Err(Error::data(format!(
                "prediction has {} classes but the estimate has {}",
                probs.len(),
                self.inv_c.len()
            )));
        }
        let mut q: Vec<f64> = probs.iter().zip(&self.inv_c).map(|(p, inv)| p * inv).collect();
        if self.renormalize {
            let total: f64 = q.iter().sum();
            if total > 0.0 {
                q.iter_mut().for_each(|v| *v /= total);
            }
        }
        Ok(q)
    }

    /// The pair with its foreground distribution replaced. The result is
    /// conditional on a relation existing, so `bg_prob` is dropped.
    pub fn recover(&self, pair: &PairPrediction) -> Result<PairPrediction> {
        Ok(PairPrediction { pred_probs: self.recover_probs(&pair.pred_probs)?, bg_prob: None, ..pair.clone() })
    }
}

pub fn recover_unbiased(
    pair: &PairPrediction,
    estimate: &LabelFrequencyEstimate,
    renormalize: bool,
) -> Result<PairPrediction> {
    Debiaser::new(estimate, renormalize)?.recover(pair)
}
