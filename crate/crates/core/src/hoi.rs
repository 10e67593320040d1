//! Keyframe human-object interaction mAP and trajectory-level relation
//! detection / tagging metrics.
//!
//! HOI categories are (interaction, object class) pairs; the subject is
//! always a person. Interaction classes are 0-based here since there is no
//! background class.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{viou, BoundingBox, Trajectory};

/// Boxes must overlap a ground-truth box with IoU strictly above this.
pub const HOI_MATCH_IOU: f64 = 0.5;

/// Categories with fewer annotated instances than this are "rare".
pub const RARE_THRESHOLD: u64 = 25;

/// Detections kept per keyframe before matching.
pub const KEYFRAME_TOP_K: usize = 100;

/// Trajectories must reach this volumetric IoU (inclusive).
pub const VIOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HoiCategory {
    pub predicate: usize,
    pub object_class: usize,
}

/// One annotated human-object pair on a keyframe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoiAnnotation {
    pub human: BoundingBox,
    pub object: BoundingBox,
    pub object_label: usize,
    /// Interaction classes present between the two.
    pub interactions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeAnnotation {
    pub video_id: String,
    pub keyframe: i64,
    pub pairs: Vec<HoiAnnotation>,
}

/// One predicted human-object pair with a score per interaction class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoiPairPrediction {
    pub human: BoundingBox,
    #[serde(default = "unit")]
    pub human_score: f64,
    pub object: BoundingBox,
    pub object_label: usize,
    #[serde(default = "unit")]
    pub object_score: f64,
    pub scores: Vec<f64>,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframePrediction {
    pub video_id: String,
    pub keyframe: i64,
    pub pairs: Vec<HoiPairPrediction>,
}

/// A single (pair, interaction) hypothesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoiDetection {
    pub pair_index: usize,
    pub predicate: usize,
    pub score: f64,
    pub human: BoundingBox,
    pub object: BoundingBox,
    pub object_label: usize,
}

impl HoiDetection {
    pub fn category(&self) -> HoiCategory {
        HoiCategory { predicate: self.predicate, object_class: self.object_label }
    }
}

/// Expands every (pair, interaction) into a detection scored
/// `human * object * interaction`, sorts best first (stable, so exact ties
/// keep input order) and keeps the first `cap`.
pub fn top_k_filter(prediction: &KeyframePrediction, cap: usize) -> Vec<HoiDetection> {
    let mut dets: Vec<HoiDetection> = prediction
        .pairs
        .iter()
        .enumerate()
        .flat_map(|(pair_index, p)| {
            p.scores.iter().enumerate().map(move |(predicate, s)| HoiDetection {
                pair_index,
                predicate,
                score: p.human_score * p.object_score * s,
                human: p.human,
                object: p.object,
                object_label: p.object_label,
            })
        })
        .collect();
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    dets.truncate(cap);
    dets
}

pub fn top100_filter(prediction: &KeyframePrediction) -> Vec<HoiDetection> {
    top_k_filter(prediction, KEYFRAME_TOP_K)
}

/// Flags each detection (already sorted best first) as true or false
/// positive against one keyframe's annotations.
///
/// A detection is a true positive when some still-unmatched annotated
/// instance has the same interaction and object class and both its human
/// and object boxes overlap with IoU > 0.5. Among several such instances the
/// one with the largest min(human IoU, object IoU) is taken, lowest index on
/// ties.
pub fn match_hoi(detections: &[HoiDetection], gt: &[HoiAnnotation]) -> Vec<bool> {
    let mut used: HashSet<(usize, usize)> = HashSet::new();
    detections
        .iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (g, ann) in gt.iter().enumerate() {
                if ann.object_label != d.object_label
                    || !ann.interactions.contains(&d.predicate)
                    || used.contains(&(g, d.predicate))
                {
                    continue;
                }
                let overlap = d.human.iou(&ann.human).min(d.object.iou(&ann.object));
                if overlap > HOI_MATCH_IOU && best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((g, overlap));
                }
            }
            match best {
                Some((g, _)) => used.insert((g, d.predicate)),
                None => false,
            }
        })
        .collect()
}

/// All-points interpolated average precision of a ranked TP/FP sequence.
pub fn average_precision(flags: &[bool], gt_count: usize) -> Result<f64> {
    if gt_count == 0 {
        return Err(Error::data("average precision needs at least one ground-truth instance"));
    }
    let mut precision = Vec::with_capacity(flags.len());
    let mut recall = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (i, &hit) in flags.iter().enumerate() {
        tp += usize::from(hit);
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / gt_count as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        if *r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = *r;
        }
    }
    Ok(ap)
}

/// Rare / non-rare by annotated instance count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Full,
    Rare,
    NonRare,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Full => "full",
            Split::Rare => "rare",
            Split::NonRare => "nonrare",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Split::Full),
            "rare" => Ok(Split::Rare),
            "nonrare" | "non-rare" => Ok(Split::NonRare),
            other => Err(Error::usage(format!("unknown split {other:?}"))),
        }
    }
}

/// Per-category instance counts deciding rare / non-rare membership.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CategorySplit {
    pub counts: BTreeMap<HoiCategory, u64>,
}

impl CategorySplit {
    pub fn from_counts(counts: BTreeMap<HoiCategory, u64>) -> Self {
        CategorySplit { counts }
    }

    /// Counts every annotated (pair, interaction) instance.
    pub fn from_annotations(gt: &[KeyframeAnnotation]) -> Self {
        let mut counts = BTreeMap::new();
        for pair in gt.iter().flat_map(|k| &k.pairs) {
            for &predicate in &pair.interactions {
                *counts.entry(HoiCategory { predicate, object_class: pair.object_label }).or_insert(0) += 1;
            }
        }
        CategorySplit { counts }
    }

    pub fn count(&self, cat: &HoiCategory) -> u64 {
        self.counts.get(cat).copied().unwrap_or(0)
    }

    pub fn is_rare(&self, cat: &HoiCategory) -> bool {
        self.count(cat) < RARE_THRESHOLD
    }

    pub fn contains(&self, split: Split, cat: &HoiCategory) -> bool {
        match split {
            Split::Full => true,
            Split::Rare => self.is_rare(cat),
            Split::NonRare => !self.is_rare(cat),
        }
    }
}

/// One ranked detection after matching, with a deterministic tie key.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    score: f64,
    /// (source record position, rank within the record)
    order: (usize, usize),
    tp: bool,
}

fn ranked_flags(mut dets: Vec<Scored>) -> Vec<bool> {
    dets.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.order.cmp(&b.order)));
    dets.into_iter().map(|d| d.tp).collect()
}

#[derive(Debug, Clone, Default)]
struct CategoryRecord {
    detections: Vec<Scored>,
    gt_count: usize,
}

/// Matched detections of a whole HOI evaluation set, grouped by category.
#[derive(Debug, Clone)]
pub struct HoiMatches {
    num_interactions: usize,
    categories: BTreeMap<HoiCategory, CategoryRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAp {
    pub category: HoiCategory,
    pub gt_count: usize,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub map: f64,
    pub per_category: Vec<CategoryAp>,
}

impl HoiMatches {
    /// Filters each keyframe's predictions to the top `cap` detections and
    /// matches them against the annotations of the same keyframe.
    ///
    /// Predictions on keyframes without annotations are all false positives.
    pub fn compute(
        gt: &[KeyframeAnnotation],
        predictions: &[KeyframePrediction],
        num_interactions: usize,
        cap: usize,
    ) -> Result<Self> {
        let mut index: HashMap<(&str, i64), usize> = HashMap::new();
        for (i, k) in gt.iter().enumerate() {
            if index.insert((k.video_id.as_str(), k.keyframe), i).is_some() {
                return Err(Error::data(format!("keyframe {}@{} annotated twice", k.video_id, k.keyframe)));
            }
            if let Some(bad) = k.pairs.iter().flat_map(|p| &p.interactions).find(|&&c| c >= num_interactions) {
                return Err(Error::data(format!(
                    "keyframe {}@{} has interaction {bad} outside 0..{num_interactions}",
                    k.video_id, k.keyframe
                )));
            }
        }
        if let Some(p) = predictions.iter().flat_map(|k| &k.pairs).find(|p| p.scores.len() != num_interactions) {
            return Err(Error::data(format!(
                "prediction has {} interaction scores, expected {num_interactions}",
                p.scores.len()
            )));
        }
        let empty: Vec<HoiAnnotation> = Vec::new();
        let matched: Vec<Vec<(HoiCategory, Scored)>> = predictions
            .par_iter()
            .enumerate()
            .map(|(record, kp)| {
                let anns = index.get(&(kp.video_id.as_str(), kp.keyframe)).map_or(&empty, |&i| &gt[i].pairs);
                let dets = top_k_filter(kp, cap);
                let flags = match_hoi(&dets, anns);
                dets.iter()
                    .zip(flags)
                    .enumerate()
                    .map(|(rank, (d, tp))| (d.category(), Scored { score: d.score, order: (record, rank), tp }))
                    .collect()
            })
            .collect();

        let mut categories: BTreeMap<HoiCategory, CategoryRecord> = BTreeMap::new();
        for (cat, count) in CategorySplit::from_annotations(gt).counts {
            categories.entry(cat).or_default().gt_count = count as usize;
        }
        for (cat, scored) in matched.into_iter().flatten() {
            categories.entry(cat).or_default().detections.push(scored);
        }
        Ok(HoiMatches { num_interactions, categories })
    }

    pub fn num_interactions(&self) -> usize {
        self.num_interactions
    }

    /// AP of every category with at least one ground-truth instance.
    pub fn category_aps(&self) -> Vec<CategoryAp> {
        self.categories
            .iter()
            .filter(|(_, rec)| rec.gt_count > 0)
            .map(|(cat, rec)| CategoryAp {
                category: *cat,
                gt_count: rec.gt_count,
                ap: average_precision(&ranked_flags(rec.detections.clone()), rec.gt_count)
                    .expect("gt_count checked above"),
            })
            .collect()
    }

    fn map_where(&self, keep: impl Fn(&HoiCategory) -> bool) -> Option<MapResult> {
        let per_category: Vec<CategoryAp> = self.category_aps().into_iter().filter(|c| keep(&c.category)).collect();
        if per_category.is_empty() {
            return None;
        }
        let map = per_category.iter().map(|c| c.ap).sum::<f64>() / per_category.len() as f64;
        Some(MapResult { map, per_category })
    }

    /// Mean AP over categories of `split` present in the evaluation set.
    pub fn hoi_map(&self, split: Split, counts: &CategorySplit) -> Result<MapResult> {
        self.map_where(|c| counts.contains(split, c))
            .ok_or_else(|| Error::data(format!("split {} has no evaluated category", split.as_str())))
    }

    /// AP per interaction class, pooling detections over object classes.
    /// Index `c` holds interaction `c`; `None` when it has no ground truth.
    pub fn predicate_ap(&self) -> Vec<Option<f64>> {
        let mut pooled: Vec<CategoryRecord> = vec![CategoryRecord::default(); self.num_interactions];
        for (cat, rec) in &self.categories {
            if let Some(slot) = pooled.get_mut(cat.predicate) {
                slot.gt_count += rec.gt_count;
                slot.detections.extend_from_slice(&rec.detections);
            }
        }
        pooled
            .into_iter()
            .map(|rec| {
                (rec.gt_count > 0)
                    .then(|| average_precision(&ranked_flags(rec.detections), rec.gt_count).expect("gt_count checked"))
            })
            .collect()
    }

    /// mAP over categories whose interaction is tagged temporal, and over
    /// the rest. A side with no evaluated category is `None`.
    pub fn temporal_spatial_map(&self, temporal: &[bool]) -> Result<TemporalSpatialMap> {
        if temporal.len() != self.num_interactions {
            return Err(Error::usage(format!(
                "temporal tags cover {} interactions, expected {}",
                temporal.len(),
                self.num_interactions
            )));
        }
        Ok(TemporalSpatialMap {
            temporal: self.map_where(|c| temporal[c.predicate]).map(|m| m.map),
            spatial: self.map_where(|c| !temporal[c.predicate]).map(|m| m.map),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalSpatialMap {
    pub temporal: Option<f64>,
    pub spatial: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: usize,
    pub predicate: usize,
    pub object: usize,
}

/// A relation between two tracked objects over a video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationInstance {
    pub triplet: Triplet,
    pub subject: Trajectory,
    pub object: Trajectory,
    #[serde(default = "unit")]
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRelations {
    pub video_id: String,
    pub relations: Vec<RelationInstance>,
}

/// Indices of `relations`, best score first; stable on ties.
fn by_score(relations: &[RelationInstance]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..relations.len()).collect();
    order.sort_by(|&a, &b| relations[b].score.total_cmp(&relations[a].score));
    order
}

/// Greedy one-to-one matching of one video's predictions (in score order)
/// against its ground truth. Returns the TP flag per ranked prediction and
/// the rank that recalled each ground-truth relation.
pub fn match_relations(
    predictions: &[RelationInstance],
    gt: &[RelationInstance],
) -> (Vec<usize>, Vec<bool>, Vec<Option<usize>>) {
    let order = by_score(predictions);
    let mut recalled = vec![None; gt.len()];
    let flags = order
        .iter()
        .enumerate()
        .map(|(rank, &p)| {
            let pred = &predictions[p];
            let mut best: Option<(usize, f64)> = None;
            for (g, ann) in gt.iter().enumerate() {
                if recalled[g].is_some() || ann.triplet != pred.triplet {
                    continue;
                }
                let overlap = viou(&pred.subject, &ann.subject).min(viou(&pred.object, &ann.object));
                if overlap >= VIOU_THRESHOLD && best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((g, overlap));
                }
            }
            if let Some((g, _)) = best {
                recalled[g] = Some(rank);
            }
            best.is_some()
        })
        .collect();
    (order, flags, recalled)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallPoint {
    pub k: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletAp {
    pub triplet: Triplet,
    pub gt_count: usize,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationDetectionReport {
    pub recall: Vec<RecallPoint>,
    pub map: f64,
    pub per_triplet: Vec<TripletAp>,
}

fn check_unique_videos(videos: &[VideoRelations], what: &str) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::new();
    for (i, v) in videos.iter().enumerate() {
        if index.insert(v.video_id.clone(), i).is_some() {
            return Err(Error::data(format!("{what} lists video {:?} twice", v.video_id)));
        }
    }
    Ok(index)
}

/// Relation detection: R@K averaged over ground-truth videos and mAP over
/// triplet categories.
pub fn relation_detection_eval(
    predictions: &[VideoRelations],
    gt: &[VideoRelations],
    ks: &[usize],
) -> Result<RelationDetectionReport> {
    let gt_index = check_unique_videos(gt, "ground truth")?;
    let pred_index = check_unique_videos(predictions, "predictions")?;
    let no_relations: Vec<RelationInstance> = Vec::new();

    // Videos in ground-truth order, then prediction-only videos in their order.
    let mut videos: Vec<(&[RelationInstance], &[RelationInstance])> = gt
        .iter()
        .map(|g| {
            let preds = pred_index.get(&g.video_id).map_or(&no_relations, |&i| &predictions[i].relations);
            (preds.as_slice(), g.relations.as_slice())
        })
        .collect();
    videos.extend(
        predictions
            .iter()
            .filter(|p| !gt_index.contains_key(&p.video_id))
            .map(|p| (p.relations.as_slice(), no_relations.as_slice())),
    );

    let matched: Vec<_> = videos.par_iter().map(|(p, g)| match_relations(p, g)).collect();

    let mut recall_sums = vec![0.0; ks.len()];
    let mut gt_videos = 0usize;
    let mut per_triplet: BTreeMap<Triplet, CategoryRecord> = BTreeMap::new();
    for (video, ((preds, gts), (order, flags, recalled))) in videos.iter().zip(&matched).enumerate() {
        for ann in gts.iter() {
            per_triplet.entry(ann.triplet).or_default().gt_count += 1;
        }
        for (rank, (&p, &tp)) in order.iter().zip(flags).enumerate() {
            per_triplet.entry(preds[p].triplet).or_default().detections.push(Scored {
                score: preds[p].score,
                order: (video, rank),
                tp,
            });
        }
        if gts.is_empty() {
            continue;
        }
        gt_videos += 1;
        for (sum, &k) in recall_sums.iter_mut().zip(ks) {
            let hits = recalled.iter().filter(|r| r.is_some_and(|r| r < k)).count();
            *sum += hits as f64 / gts.len() as f64;
        }
    }
    if gt_videos == 0 {
        return Err(Error::data("no video with a ground-truth relation"));
    }
    let per_triplet: Vec<TripletAp> = per_triplet
        .into_iter()
        .filter(|(_, rec)| rec.gt_count > 0)
        .map(|(triplet, rec)| TripletAp {
            triplet,
            gt_count: rec.gt_count,
            ap: average_precision(&ranked_flags(rec.detections), rec.gt_count).expect("gt_count checked"),
        })
        .collect();
    let map = per_triplet.iter().map(|t| t.ap).sum::<f64>() / per_triplet.len() as f64;
    Ok(RelationDetectionReport {
        recall: ks.iter().zip(recall_sums).map(|(&k, s)| RecallPoint { k, value: s / gt_videos as f64 }).collect(),
        map,
        per_triplet,
    })
}

/// Distinct predicted triplets of a video, best first, each at its
/// highest score; ties keep first-appearance order.
pub fn ranked_tags(relations: &[RelationInstance]) -> Vec<Triplet> {
    let mut best: Vec<(Triplet, f64)> = Vec::new();
    let mut slot: HashMap<Triplet, usize> = HashMap::new();
    for r in relations {
        match slot.get(&r.triplet) {
            Some(&i) => best[i].1 = best[i].1.max(r.score),
            None => {
                slot.insert(r.triplet, best.len());
                best.push((r.triplet, r.score));
            }
        }
    }
    best.sort_by(|a, b| b.1.total_cmp(&a.1));
    best.into_iter().map(|(t, _)| t).collect()
}

/// Relation tagging precision@K averaged over ground-truth videos.
pub fn relation_tagging_precision(
    predictions: &[VideoRelations],
    gt: &[VideoRelations],
    ks: &[usize],
) -> Result<Vec<RecallPoint>> {
    if ks.contains(&0) {
        return Err(Error::usage("tagging cutoff must be at least 1"));
    }
    let pred_index = check_unique_videos(predictions, "predictions")?;
    check_unique_videos(gt, "ground truth")?;
    let mut sums = vec![0.0; ks.len()];
    let mut videos = 0usize;
    for g in gt.iter().filter(|g| !g.relations.is_empty()) {
        videos += 1;
        let labels: HashSet<Triplet> = g.relations.iter().map(|r| r.triplet).collect();
        let tags = pred_index.get(&g.video_id).map(|&i| ranked_tags(&predictions[i].relations)).unwrap_or_default();
        for (sum, &k) in sums.iter_mut().zip(ks) {
            let correct = tags.iter().take(k).filter(|t| labels.contains(t)).count();
            *sum += correct as f64 / k as f64;
        }
    }
    if videos == 0 {
        return Err(Error::data("no video with a ground-truth relation"));
    }
    Ok(ks.iter().zip(sums).map(|(&k, s)| RecallPoint { k, value: s / videos as f64 }).collect())
}
