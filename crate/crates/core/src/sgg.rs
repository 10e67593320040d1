//! Image-level scene-graph metrics: candidate ranking, triplet matching,
//! Recall@K, mean Recall@K (with and without graph constraint) and
//! head/middle/tail aggregation.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ObjectInstance, PredicateVocabulary, SceneGraph};
use crate::pu::{PairPrediction, PerImagePredictions};

/// IoU a candidate box needs against a ground-truth box to count as a hit
/// (inclusive).
pub const MATCH_IOU: f64 = 0.5;

pub const DEFAULT_KS: [usize; 3] = [20, 50, 100];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvaluationMode {
    PredCls,
    SgCls,
    SgDet,
}

impl EvaluationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvaluationMode::PredCls => "predcls",
            EvaluationMode::SgCls => "sgcls",
            EvaluationMode::SgDet => "sgdet",
        }
    }
}

impl fmt::Display for EvaluationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvaluationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "predcls" => Ok(EvaluationMode::PredCls),
            "sgcls" => Ok(EvaluationMode::SgCls),
            "sgdet" => Ok(EvaluationMode::SgDet),
            other => Err(Error::usage(format!("unknown evaluation mode {other:?}"))),
        }
    }
}

/// One scored (subject, predicate, object) candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedTriplet {
    /// Position of the source pair in the per-image input.
    pub pair_index: usize,
    pub subj: ObjectInstance,
    pub pred: usize,
    pub obj: ObjectInstance,
    pub score: f64,
}

fn object_factor(pair: &PairPrediction, mode: EvaluationMode) -> f64 {
    match mode {
        EvaluationMode::PredCls => 1.0,
        EvaluationMode::SgCls | EvaluationMode::SgDet => pair.subj.score * pair.obj.score,
    }
}

/// Lowest-index class holding the largest foreground probability.
fn argmax_class(probs: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &p) in probs.iter().enumerate() {
        if best.is_none_or(|(_, b)| p > b) {
            best = Some((i, p));
        }
    }
    best.map(|(i, _)| i + 1)
}

fn rank_order(a: &RankedTriplet, b: &RankedTriplet) -> Ordering {
    b.score.total_cmp(&a.score).then(a.pair_index.cmp(&b.pair_index)).then(a.pred.cmp(&b.pred))
}

/// Expands pairs into scored candidates, best first.
///
/// With `graph_constraint` each pair contributes only its argmax foreground
/// predicate; without it every predicate becomes a candidate. The score is
/// `subject score * object score * predicate probability` (object scores are
/// taken as 1 in PredCls). Ties are broken by pair order, then predicate.
pub fn rank_predictions(pairs: &[PairPrediction], mode: EvaluationMode, graph_constraint: bool) -> Vec<RankedTriplet> {
    let mut out = Vec::with_capacity(if graph_constraint {
        pairs.len()
    } else {
        pairs.iter().map(PairPrediction::num_predicates).sum()
    });
    for (pair_index, pair) in pairs.iter().enumerate() {
        let factor = object_factor(pair, mode);
        let make = |pred: usize| RankedTriplet {
            pair_index,
            subj: pair.subj,
            pred,
            obj: pair.obj,
            score: factor * pair.prob(pred),
        };
        if graph_constraint {
            out.extend(argmax_class(&pair.pred_probs).map(make));
        } else {
            out.extend((1..=pair.num_predicates()).map(make));
        }
    }
    out.sort_by(rank_order);
    out
}

fn candidate_hits(c: &RankedTriplet, gt: &SceneGraph, rel_index: usize) -> bool {
    let rel = &gt.relations[rel_index];
    let (Some(gs), Some(go)) = (gt.objects.get(rel.subj), gt.objects.get(rel.obj)) else {
        return false;
    };
    rel.pred == c.pred
        && c.subj.label == gs.label
        && c.obj.label == go.label
        && c.subj.bbox.iou(&gs.bbox) >= MATCH_IOU
        && c.obj.bbox.iou(&go.bbox) >= MATCH_IOU
}

/// For each ground-truth relation, the 0-based rank of the candidate that
/// recalled it, scanning at most `limit` candidates.
///
/// Candidates are visited in order; each claims the lowest-index
/// ground-truth relation it matches that is still unclaimed. Because the
/// scan is greedy, the hits within the first `k` candidates are exactly the
/// relations whose rank is below `k`.
pub fn hit_ranks(candidates: &[RankedTriplet], gt: &SceneGraph, limit: usize) -> Vec<Option<usize>> {
    let mut ranks = vec![None; gt.relations.len()];
    for (rank, c) in candidates.iter().take(limit).enumerate() {
        if let Some(g) = (0..gt.relations.len()).find(|&g| ranks[g].is_none() && candidate_hits(c, gt, g)) {
            ranks[g] = Some(rank);
        }
    }
    ranks
}

/// Indices of ground-truth relations recalled by the top `k` candidates.
pub fn match_ranked(candidates: &[RankedTriplet], gt: &SceneGraph, k: usize) -> Vec<usize> {
    hit_ranks(candidates, gt, k).iter().enumerate().filter_map(|(g, r)| r.map(|_| g)).collect()
}

/// Matching result of one image, reusable for every cutoff.
#[derive(Debug, Clone)]
pub struct ImageOutcome {
    /// (predicate, rank at which it was recalled) for each ground-truth relation.
    pub relations: Vec<(usize, Option<usize>)>,
}

pub fn evaluate_image(
    gt: &SceneGraph,
    pairs: &[PairPrediction],
    mode: EvaluationMode,
    graph_constraint: bool,
    max_k: usize,
) -> ImageOutcome {
    let candidates = rank_predictions(pairs, mode, graph_constraint);
    let ranks = hit_ranks(&candidates, gt, max_k);
    ImageOutcome { relations: gt.relations.iter().map(|r| r.pred).zip(ranks).collect() }
}

/// Recall counters for one cutoff, merged image by image in input order.
#[derive(Debug, Clone)]
struct CutoffTally {
    k: usize,
    recall_sum: f64,
    class_hits: Vec<u64>,
}

/// Aggregates [`ImageOutcome`]s into Recall@K and mean Recall@K.
#[derive(Debug, Clone)]
pub struct RecallAccumulator {
    num_predicates: usize,
    images: u64,
    class_gt: Vec<u64>,
    tallies: Vec<CutoffTally>,
}

impl RecallAccumulator {
    pub fn new(num_predicates: usize, ks: &[usize]) -> Self {
        RecallAccumulator {
            num_predicates,
            images: 0,
            class_gt: vec![0; num_predicates + 1],
            tallies: ks
                .iter()
                .map(|&k| CutoffTally { k, recall_sum: 0.0, class_hits: vec![0; num_predicates + 1] })
                .collect(),
        }
    }

    pub fn add(&mut self, outcome: &ImageOutcome) {
        if outcome.relations.is_empty() {
            return;
        }
        self.images += 1;
        for &(pred, _) in &outcome.relations {
            if pred <= self.num_predicates {
                self.class_gt[pred] += 1;
            }
        }
        let total = outcome.relations.len() as f64;
        for tally in &mut self.tallies {
            let mut hits = 0u64;
            for &(pred, rank) in &outcome.relations {
                if rank.is_some_and(|r| r < tally.k) {
                    hits += 1;
                    if pred <= self.num_predicates {
                        tally.class_hits[pred] += 1;
                    }
                }
            }
            tally.recall_sum += hits as f64 / total;
        }
    }

    /// Number of images with at least one ground-truth relation.
    pub fn images(&self) -> u64 {
        self.images
    }

    pub fn finish(&self) -> Result<Vec<RecallAtK>> {
        if self.images == 0 {
            return Err(Error::data("no image with a ground-truth relation to evaluate"));
        }
        Ok(self
            .tallies
            .iter()
            .map(|t| {
                let per_class: Vec<Option<f64>> = (1..=self.num_predicates)
                    .map(|r| (self.class_gt[r] > 0).then(|| t.class_hits[r] as f64 / self.class_gt[r] as f64))
                    .collect();
                RecallAtK {
                    k: t.k,
                    recall: t.recall_sum / self.images as f64,
                    mean_recall: mean_defined(&per_class).unwrap_or(0.0),
                    per_class,
                    buckets: None,
                }
            })
            .collect())
    }
}

fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallAtK {
    pub k: usize,
    pub recall: f64,
    pub mean_recall: f64,
    /// Recall of class `r` at index `r - 1`; `None` when the class has no
    /// ground truth in the evaluated set.
    pub per_class: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buckets: Option<BucketRecall>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Head,
    Middle,
    Tail,
}

impl Bucket {
    pub fn as_str(&self) -> &'static str {
        match self {
            Bucket::Head => "head",
            Bucket::Middle => "middle",
            Bucket::Tail => "tail",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketRecall {
    pub head: Option<f64>,
    pub middle: Option<f64>,
    pub tail: Option<f64>,
}

/// Sizes of the head, middle and tail buckets for `k` classes: 30% / 40% /
/// 30% rounded, i.e. 15 / 20 / 15 for 50 classes.
pub fn bucket_sizes(k: usize) -> Result<(usize, usize, usize)> {
    if k < 3 {
        return Err(Error::data(format!("head/middle/tail needs at least 3 classes, got {k}")));
    }
    let head = (0.3 * k as f64).round() as usize;
    let tail = head;
    Ok((head, k - head - tail, tail))
}

/// Bucket of each 1-based class (index `r - 1`), by training frequency.
pub fn class_buckets(vocab: &PredicateVocabulary) -> Result<Vec<Bucket>> {
    let k = vocab.num_predicates();
    let (head, middle, _) = bucket_sizes(k)?;
    let mut out = vec![Bucket::Tail; k];
    for (position, class) in vocab.classes_by_frequency().into_iter().enumerate() {
        out[class - 1] = if position < head {
            Bucket::Head
        } else if position < head + middle {
            Bucket::Middle
        } else {
            Bucket::Tail
        };
    }
    Ok(out)
}

/// Mean per-class recall inside each frequency bucket; classes without
/// ground truth are skipped.
pub fn head_middle_tail(vocab: &PredicateVocabulary, per_class: &[Option<f64>]) -> Result<BucketRecall> {
    if per_class.len() != vocab.num_predicates() {
        return Err(Error::data(format!(
            "per-class vector has {} entries, vocabulary has {}",
            per_class.len(),
            vocab.num_predicates()
        )));
    }
    let buckets = class_buckets(vocab)?;
    let mean_of = |which: Bucket| {
        let members: Vec<Option<f64>> =
            per_class.iter().zip(&buckets).filter(|(_, b)| **b == which).map(|(v, _)| *v).collect();
        mean_defined(&members)
    };
    Ok(BucketRecall { head: mean_of(Bucket::Head), middle: mean_of(Bucket::Middle), tail: mean_of(Bucket::Tail) })
}

/// One ground-truth graph with the predictions made for the same image.
#[derive(Debug, Clone, PartialEq)]
pub struct SggSample {
    pub gt: SceneGraph,
    pub predictions: PerImagePredictions,
}

fn check_ids(samples: &[SggSample]) -> Result<()> {
    match samples.iter().find(|s| s.gt.image_id != s.predictions.image_id) {
        Some(s) => Err(Error::usage(format!(
            "ground truth {:?} paired with predictions for {:?}",
            s.gt.image_id, s.predictions.image_id
        ))),
        None => Ok(()),
    }
}

fn infer_num_predicates(samples: &[SggSample]) -> usize {
    let from_preds =
        samples.iter().flat_map(|s| s.predictions.pairs.iter().map(PairPrediction::num_predicates)).max().unwrap_or(0);
    let from_gt = samples.iter().flat_map(|s| s.gt.relations.iter().map(|r| r.pred)).max().unwrap_or(0);
    from_preds.max(from_gt)
}

fn recall_rows(
    samples: &[SggSample],
    ks: &[usize],
    mode: EvaluationMode,
    graph_constraint: bool,
    num_predicates: usize,
) -> Result<Vec<RecallAtK>> {
    check_ids(samples)?;
    if ks.contains(&0) {
        return Err(Error::usage("cutoff K must be at least 1"));
    }
    let max_k = ks.iter().copied().max().unwrap_or(0);
    let outcomes: Vec<ImageOutcome> = samples
        .par_iter()
        .map(|s| evaluate_image(&s.gt, &s.predictions.pairs, mode, graph_constraint, max_k))
        .collect();
    let mut acc = RecallAccumulator::new(num_predicates, ks);
    outcomes.iter().for_each(|o| acc.add(o));
    acc.finish()
}

/// Image-averaged Recall@K.
pub fn recall_at_k(samples: &[SggSample], k: usize, mode: EvaluationMode, graph_constraint: bool) -> Result<f64> {
    let rows = recall_rows(samples, &[k], mode, graph_constraint, infer_num_predicates(samples))?;
    Ok(rows[0].recall)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanRecall {
    pub mean: f64,
    pub per_class: Vec<Option<f64>>,
}

/// Mean over classes of the dataset-pooled per-class recall.
pub fn mean_recall_at_k(
    samples: &[SggSample],
    k: usize,
    mode: EvaluationMode,
    graph_constraint: bool,
    num_predicates: usize,
) -> Result<MeanRecall> {
    let mut rows = recall_rows(samples, &[k], mode, graph_constraint, num_predicates)?;
    let row = rows.remove(0);
    Ok(MeanRecall { mean: row.mean_recall, per_class: row.per_class })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphConstraint {
    On,
    Off,
    Both,
}

impl GraphConstraint {
    pub fn with_constraint(&self) -> bool {
        matches!(self, GraphConstraint::On | GraphConstraint::Both)
    }

    pub fn without_constraint(&self) -> bool {
        matches!(self, GraphConstraint::Off | GraphConstraint::Both)
    }
}

impl FromStr for GraphConstraint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "on" => Ok(GraphConstraint::On),
            "off" => Ok(GraphConstraint::Off),
            "both" => Ok(GraphConstraint::Both),
            other => Err(Error::usage(format!("graph constraint must be on|off|both, got {other:?}"))),
        }
    }
}

/// Full recall suite for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub mode: EvaluationMode,
    pub num_predicates: usize,
    pub images_evaluated: u64,
    /// Graph-constrained R@K / mR@K rows, one per cutoff.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constrained: Option<Vec<RecallAtK>>,
    /// Unconstrained ("ng") rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unconstrained: Option<Vec<RecallAtK>>,
}

impl RecallReport {
    pub fn rows(&self, graph_constraint: bool) -> Option<&[RecallAtK]> {
        if graph_constraint {
            self.constrained.as_deref()
        } else {
            self.unconstrained.as_deref()
        }
    }
}

/// Incremental builder for a [`RecallReport`], fed image by image so large
/// prediction dumps never need to be held in memory at once.
#[derive(Debug, Clone)]
pub struct SggEvaluator {
    mode: EvaluationMode,
    num_predicates: usize,
    max_k: usize,
    constrained: Option<RecallAccumulator>,
    unconstrained: Option<RecallAccumulator>,
}

/// Both graph-constraint variants of one image.
#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub constrained: Option<ImageOutcome>,
    pub unconstrained: Option<ImageOutcome>,
}

impl SggEvaluator {
    pub fn new(mode: EvaluationMode, num_predicates: usize, ks: &[usize], gc: GraphConstraint) -> Result<Self> {
        if ks.is_empty() || ks.contains(&0) {
            return Err(Error::usage("cutoffs must be a non-empty list of positive integers"));
        }
        Ok(SggEvaluator {
            mode,
            num_predicates,
            max_k: ks.iter().copied().max().unwrap_or(1),
            constrained: gc.with_constraint().then(|| RecallAccumulator::new(num_predicates, ks)),
            unconstrained: gc.without_constraint().then(|| RecallAccumulator::new(num_predicates, ks)),
        })
    }

    /// Pure per-image work; safe to run on any worker.
    pub fn outcome(&self, gt: &SceneGraph, pairs: &[PairPrediction]) -> SampleOutcome {
        let run = |gc| evaluate_image(gt, pairs, self.mode, gc, self.max_k);
        SampleOutcome {
            constrained: self.constrained.as_ref().map(|_| run(true)),
            unconstrained: self.unconstrained.as_ref().map(|_| run(false)),
        }
    }

    /// Merges outcomes; call in input order for reproducible sums.
    pub fn add(&mut self, outcome: &SampleOutcome) {
        if let (Some(acc), Some(o)) = (self.constrained.as_mut(), outcome.constrained.as_ref()) {
            acc.add(o);
        }
        if let (Some(acc), Some(o)) = (self.unconstrained.as_mut(), outcome.unconstrained.as_ref()) {
            acc.add(o);
        }
    }

    pub fn add_batch(&mut self, samples: &[SggSample]) -> Result<()> {
        check_ids(samples)?;
        let outcomes: Vec<SampleOutcome> =
            samples.par_iter().map(|s| self.outcome(&s.gt, &s.predictions.pairs)).collect();
        outcomes.iter().for_each(|o| self.add(o));
        Ok(())
    }

    pub fn finish(&self, vocab: Option<&PredicateVocabulary>) -> Result<RecallReport> {
        let finish_rows = |acc: &RecallAccumulator| -> Result<Vec<RecallAtK>> {
            let mut rows = acc.finish()?;
            if let Some(v) = vocab {
                for row in &mut rows {
                    row.buckets = Some(head_middle_tail(v, &row.per_class)?);
                }
            }
            Ok(rows)
        };
        let images = self.constrained.iter().chain(&self.unconstrained).map(|a| a.images()).next().unwrap_or(0);
        Ok(RecallReport {
            mode: self.mode,
            num_predicates: self.num_predicates,
            images_evaluated: images,
            constrained: self.constrained.as_ref().map(finish_rows).transpose()?,
            unconstrained: self.unconstrained.as_ref().map(finish_rows).transpose()?,
        })
    }
}

/// Evaluates a whole in-memory dataset.
pub fn evaluate_sgg(
    samples: &[SggSample],
    mode: EvaluationMode,
    num_predicates: usize,
    ks: &[usize],
    gc: GraphConstraint,
    vocab: Option<&PredicateVocabulary>,
) -> Result<RecallReport> {
    let mut ev = SggEvaluator::new(mode, num_predicates, ks, gc)?;
    ev.add_batch(samples)?;
    ev.finish(vocab)
}
