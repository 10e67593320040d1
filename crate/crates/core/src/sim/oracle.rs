//! Brute-force reference metrics for tiny instances.
//!
//! Nothing here calls into the metric engines. Overlaps, rankings,
//! matchings and precision-recall points are recomputed from their
//! definitions: a candidate's rank is the number of candidates that beat
//! it, and AP is summed directly over the true-positive ranks.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::hoi::{HoiCategory, KeyframeAnnotation, KeyframePrediction, RelationInstance, Triplet, VideoRelations};
use crate::model::{BoundingBox, PredicateVocabulary, Trajectory};
use crate::sgg::{EvaluationMode, SggSample};

pub const MAX_OBJECTS: usize = 4;
pub const MAX_PREDICATES: usize = 5;
pub const MAX_IMAGES: usize = 3;
/// Detections per keyframe or relations per video.
pub const MAX_DETECTIONS: usize = 5;

fn too_large(what: String) -> Error {
    Error::usage(format!("instance too large for the brute-force oracle: {what}"))
}

fn overlap(a: &BoundingBox, b: &BoundingBox) -> (f64, f64) {
    let iw = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let ih = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = iw * ih;
    let area = |r: &BoundingBox| (r.x1 - r.x0).max(0.0) * (r.y1 - r.y0).max(0.0);
    (inter, area(a) + area(b) - inter)
}

fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (inter, union) = overlap(a, b);
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

fn traj_iou(a: &Trajectory, b: &Trajectory) -> f64 {
    let frames: std::collections::BTreeSet<i64> = a.present_frames().chain(b.present_frames()).collect();
    let (mut inter, mut union) = (0.0, 0.0);
    for f in frames {
        let area = |r: &BoundingBox| (r.x1 - r.x0).max(0.0) * (r.y1 - r.y0).max(0.0);
        match (a.box_at(f), b.box_at(f)) {
            (Some(p), Some(q)) => {
                let (i, u) = overlap(p, q);
                inter += i;
                union += u;
            }
            (Some(p), None) | (None, Some(p)) => union += area(p),
            (None, None) => {}
        }
    }
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// `rank[i]` = number of items that beat item `i`, where a higher key wins
/// and ties go to the earlier item.
fn ranks_by_counting(keys: &[f64]) -> Vec<usize> {
    (0..keys.len())
        .map(|i| (0..keys.len()).filter(|&j| keys[j] > keys[i] || (keys[j] == keys[i] && j < i)).count())
        .collect()
}

/// Items in rank order.
fn ordered(keys: &[f64]) -> Vec<usize> {
    let ranks = ranks_by_counting(keys);
    let mut out = vec![0; keys.len()];
    for (i, r) in ranks.into_iter().enumerate() {
        out[r] = i;
    }
    out
}

/// AP as `(1/G) * sum over true positives of the best precision at or
/// after that rank`.
pub fn brute_force_ap(flags: &[bool], gt_count: usize) -> f64 {
    let precision_at = |n: usize| flags[..n].iter().filter(|&&f| f).count() as f64 / n as f64;
    let mut total = 0.0;
    for i in 0..flags.len() {
        if flags[i] {
            total += (i + 1..=flags.len()).map(precision_at).fold(0.0, f64::max);
        }
    }
    total / gt_count as f64
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRecall {
    pub k: usize,
    pub graph_constraint: bool,
    pub recall: f64,
    pub mean_recall: f64,
    pub per_class: Vec<Option<f64>>,
    /// Head, middle and tail means when a vocabulary is given.
    pub buckets: Option<[Option<f64>; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSgg {
    pub mode: EvaluationMode,
    pub rows: Vec<OracleRecall>,
}

/// For each ground-truth relation of one image, the best rank among the
/// candidates that match it.
fn image_ranks(
    sample: &SggSample,
    mode: EvaluationMode,
    graph_constraint: bool,
) -> Result<Vec<(usize, Option<usize>)>> {
    let pairs = &sample.predictions.pairs;
    let mut cands: Vec<(usize, usize, f64)> = Vec::new();
    for (pi, p) in pairs.iter().enumerate() {
        let factor = if mode == EvaluationMode::PredCls { 1.0 } else { p.subj.score * p.obj.score };
        let kk = p.pred_probs.len();
        for r in 0..kk {
            let beaten =
                (0..kk).any(|q| p.pred_probs[q] > p.pred_probs[r] || (p.pred_probs[q] == p.pred_probs[r] && q < r));
            if graph_constraint && beaten {
                continue;
            }
            cands.push((pi, r + 1, factor * p.pred_probs[r]));
        }
    }
    let keys: Vec<f64> = cands.iter().map(|c| c.2).collect();
    // Candidates are generated in (pair, predicate) order, so counting
    // predecessors with index ties reproduces the documented tie rule.
    let ranks = ranks_by_counting(&keys);

    let gt = &sample.gt;
    let mut best: Vec<Option<usize>> = vec![None; gt.relations.len()];
    for (ci, &(pi, pred, _)) in cands.iter().enumerate() {
        let p = &pairs[pi];
        let hits: Vec<usize> = gt
            .relations
            .iter()
            .enumerate()
            .filter(|(_, rel)| {
                let (s, o) = (&gt.objects[rel.subj], &gt.objects[rel.obj]);
                rel.pred == pred
                    && p.subj.label == s.label
                    && p.obj.label == o.label
                    && box_iou(&p.subj.bbox, &s.bbox) >= 0.5
                    && box_iou(&p.obj.bbox, &o.bbox) >= 0.5
            })
            .map(|(g, _)| g)
            .collect();
        if hits.len() > 1 {
            return Err(Error::usage(format!(
                "image {:?}: a candidate matches {} ground-truth relations; the oracle only handles unambiguous matchings",
                gt.image_id,
                hits.len()
            )));
        }
        for g in hits {
            best[g] = Some(best[g].map_or(ranks[ci], |b: usize| b.min(ranks[ci])));
        }
    }
    Ok(gt.relations.iter().map(|r| r.pred).zip(best).collect())
}

/// Head/middle/tail membership recomputed from training counts.
fn oracle_buckets(vocab: &PredicateVocabulary) -> Vec<usize> {
    let freq = &vocab.train_frequency;
    let k = freq.len();
    let head = ((3 * k) as f64 / 10.0).round() as usize;
    (0..k)
        .map(|r| {
            let position = (0..k).filter(|&q| freq[q] > freq[r] || (freq[q] == freq[r] && q < r)).count();
            if position < head {
                0
            } else if position < k - head {
                1
            } else {
                2
            }
        })
        .collect()
}

/// Reference R@K, mR@K (both graph-constraint variants) and bucket means.
///
/// Within the oracle's domain every candidate matches at most one
/// ground-truth relation, so a maximum one-to-one matching of the top `K`
/// recalls exactly the relations with some matching candidate ranked below
/// `K`.
pub fn brute_force_sgg(
    samples: &[SggSample],
    ks: &[usize],
    mode: EvaluationMode,
    num_predicates: usize,
    vocab: Option<&PredicateVocabulary>,
) -> Result<OracleSgg> {
    if samples.len() > MAX_IMAGES {
        return Err(too_large(format!("{} images", samples.len())));
    }
    if num_predicates > MAX_PREDICATES {
        return Err(too_large(format!("{num_predicates} predicates")));
    }
    for s in samples {
        let pred_objects = s.predictions.pairs.len();
        if s.gt.objects.len() > MAX_OBJECTS || pred_objects > MAX_OBJECTS * (MAX_OBJECTS - 1) {
            return Err(too_large(format!("image {:?} has too many objects or pairs", s.gt.image_id)));
        }
    }
    let buckets = vocab.map(oracle_buckets);
    let mut rows = Vec::new();
    for gc in [true, false] {
        let per_image: Vec<Vec<(usize, Option<usize>)>> =
            samples.iter().map(|s| image_ranks(s, mode, gc)).collect::<Result<_>>()?;
        for &k in ks {
            let mut image_recalls = Vec::new();
            let mut class_gt = vec![0u64; num_predicates + 1];
            let mut class_hit = vec![0u64; num_predicates + 1];
            for rels in per_image.iter().filter(|r| !r.is_empty()) {
                let hits = rels.iter().filter(|(_, r)| r.is_some_and(|r| r < k)).count();
                image_recalls.push(hits as f64 / rels.len() as f64);
                for &(pred, r) in rels {
                    class_gt[pred] += 1;
                    class_hit[pred] += u64::from(r.is_some_and(|r| r < k));
                }
            }
            if image_recalls.is_empty() {
                return Err(Error::data("no image with a ground-truth relation"));
            }
            let per_class: Vec<Option<f64>> = (1..=num_predicates)
                .map(|r| (class_gt[r] > 0).then(|| class_hit[r] as f64 / class_gt[r] as f64))
                .collect();
            let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
            let bucket_means = buckets.as_ref().map(|b| {
                [0, 1, 2].map(|which| {
                    let vals: Vec<f64> =
                        (0..num_predicates).filter(|&r| b[r] == which).filter_map(|r| per_class[r]).collect();
                    mean(&vals)
                })
            });
            rows.push(OracleRecall {
                k,
                graph_constraint: gc,
                recall: mean(&image_recalls).expect("non-empty"),
                mean_recall: mean(&defined).unwrap_or(0.0),
                per_class,
                buckets: bucket_means,
            });
        }
    }
    Ok(OracleSgg { mode, rows })
}

/// Runs [`brute_force_sgg`] for every requested mode.
pub fn brute_force_metrics(
    samples: &[SggSample],
    ks: &[usize],
    modes: &[EvaluationMode],
    num_predicates: usize,
    vocab: Option<&PredicateVocabulary>,
) -> Result<Vec<OracleSgg>> {
    modes.iter().map(|&m| brute_force_sgg(samples, ks, m, num_predicates, vocab)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleHoi {
    pub per_category: BTreeMap<HoiCategory, f64>,
    pub full: Option<f64>,
    pub rare: Option<f64>,
    pub non_rare: Option<f64>,
    /// Pooled AP per interaction class.
    pub predicate_ap: Vec<Option<f64>>,
}

/// Reference HOI evaluation with the per-keyframe cap and the rare
/// threshold given explicitly.
pub fn brute_force_hoi(
    gt: &[KeyframeAnnotation],
    predictions: &[KeyframePrediction],
    num_interactions: usize,
    cap: usize,
    counts: &BTreeMap<HoiCategory, u64>,
    rare_below: u64,
) -> Result<OracleHoi> {
    if gt.len() > MAX_IMAGES || predictions.len() > MAX_IMAGES {
        return Err(too_large("more than 3 keyframes".into()));
    }
    if predictions.iter().any(|k| k.pairs.len() * num_interactions > MAX_DETECTIONS) {
        return Err(too_large("more than 5 detections on a keyframe".into()));
    }
    // (category, score, record, rank, tp)
    let mut scored: Vec<(HoiCategory, f64, usize, usize, bool)> = Vec::new();
    for (record, kp) in predictions.iter().enumerate() {
        let annotated: Vec<&KeyframeAnnotation> =
            gt.iter().filter(|g| g.video_id == kp.video_id && g.keyframe == kp.keyframe).collect();
        if annotated.len() > 1 {
            return Err(Error::data("keyframe annotated twice"));
        }
        let anns = annotated.first().map(|g| g.pairs.as_slice()).unwrap_or(&[]);
        let dets: Vec<(usize, usize, f64)> = kp
            .pairs
            .iter()
            .enumerate()
            .flat_map(|(pi, p)| (0..p.scores.len()).map(move |c| (pi, c, p.human_score * p.object_score * p.scores[c])))
            .collect();
        let keys: Vec<f64> = dets.iter().map(|d| d.2).collect();
        let mut used: Vec<(usize, usize)> = Vec::new();
        for (rank, di) in ordered(&keys).into_iter().take(cap).enumerate() {
            let (pi, c, score) = dets[di];
            let p = &kp.pairs[pi];
            let mut best: Option<(usize, f64)> = None;
            for (g, a) in anns.iter().enumerate() {
                if a.object_label != p.object_label || !a.interactions.contains(&c) || used.contains(&(g, c)) {
                    continue;
                }
                let m = box_iou(&p.human, &a.human).min(box_iou(&p.object, &a.object));
                if m > 0.5 && best.is_none_or(|(_, b)| m > b) {
                    best = Some((g, m));
                }
            }
            if let Some((g, _)) = best {
                used.push((g, c));
            }
            let cat = HoiCategory { predicate: c, object_class: p.object_label };
            scored.push((cat, score, record, rank, best.is_some()));
        }
    }
    let mut gt_count: BTreeMap<HoiCategory, usize> = BTreeMap::new();
    for a in gt.iter().flat_map(|g| &g.pairs) {
        for &c in &a.interactions {
            *gt_count.entry(HoiCategory { predicate: c, object_class: a.object_label }).or_default() += 1;
        }
    }
    let ap_of = |keep: &dyn Fn(&HoiCategory) -> bool, g: usize| {
        let mut list: Vec<&(HoiCategory, f64, usize, usize, bool)> = scored.iter().filter(|s| keep(&s.0)).collect();
        list.sort_by(|a, b| b.1.total_cmp(&a.1).then((a.2, a.3).cmp(&(b.2, b.3))));
        let flags: Vec<bool> = list.iter().map(|s| s.4).collect();
        brute_force_ap(&flags, g)
    };
    let per_category: BTreeMap<HoiCategory, f64> =
        gt_count.iter().map(|(cat, &g)| (*cat, ap_of(&|c: &HoiCategory| c == cat, g))).collect();
    let count = |c: &HoiCategory| counts.get(c).copied().unwrap_or(0);
    let split = |keep: &dyn Fn(&HoiCategory) -> bool| {
        let vals: Vec<f64> = per_category.iter().filter(|(c, _)| keep(c)).map(|(_, &ap)| ap).collect();
        mean(&vals)
    };
    let predicate_ap = (0..num_interactions)
        .map(|c| {
            let g: usize = gt_count.iter().filter(|(cat, _)| cat.predicate == c).map(|(_, &n)| n).sum();
            (g > 0).then(|| ap_of(&|cat: &HoiCategory| cat.predicate == c, g))
        })
        .collect();
    Ok(OracleHoi {
        full: split(&|_| true),
        rare: split(&|c| count(c) < rare_below),
        non_rare: split(&|c| count(c) >= rare_below),
        per_category,
        predicate_ap,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleVidVrd {
    pub recall: Vec<f64>,
    pub map: f64,
    pub tagging: Vec<f64>,
}

/// Reference relation detection R@K / mAP and tagging P@K.
pub fn brute_force_vidvrd(
    predictions: &[VideoRelations],
    gt: &[VideoRelations],
    ks: &[usize],
    tag_ks: &[usize],
) -> Result<OracleVidVrd> {
    if gt.len() > MAX_IMAGES || predictions.len() > MAX_IMAGES {
        return Err(too_large("more than 3 videos".into()));
    }
    if predictions.iter().chain(gt).any(|v| v.relations.len() > MAX_DETECTIONS) {
        return Err(too_large("more than 5 relations in a video".into()));
    }
    let find = |id: &str| predictions.iter().find(|p| p.video_id == id).map(|p| p.relations.as_slice()).unwrap_or(&[]);
    let mut videos: Vec<(&[RelationInstance], &[RelationInstance])> =
        gt.iter().map(|g| (find(&g.video_id), g.relations.as_slice())).collect();
    for p in predictions.iter().filter(|p| !gt.iter().any(|g| g.video_id == p.video_id)) {
        videos.push((p.relations.as_slice(), &[]));
    }

    let mut recall_sums = vec![0.0; ks.len()];
    let mut gt_videos = 0usize;
    let mut scored: Vec<(Triplet, f64, usize, usize, bool)> = Vec::new();
    let mut gt_count: BTreeMap<Triplet, usize> = BTreeMap::new();
    for (v, (preds, gts)) in videos.iter().enumerate() {
        let keys: Vec<f64> = preds.iter().map(|p| p.score).collect();
        let mut recalled: Vec<Option<usize>> = vec![None; gts.len()];
        for (rank, pi) in ordered(&keys).into_iter().enumerate() {
            let p = &preds[pi];
            let mut best: Option<(usize, f64)> = None;
            for (g, a) in gts.iter().enumerate() {
                if recalled[g].is_some() || a.triplet != p.triplet {
                    continue;
                }
                let m = traj_iou(&p.subject, &a.subject).min(traj_iou(&p.object, &a.object));
                if m >= 0.5 && best.is_none_or(|(_, b)| m > b) {
                    best = Some((g, m));
                }
            }
            if let Some((g, _)) = best {
                recalled[g] = Some(rank);
            }
            scored.push((p.triplet, p.score, v, rank, best.is_some()));
        }
        for a in gts.iter() {
            *gt_count.entry(a.triplet).or_default() += 1;
        }
        if !gts.is_empty() {
            gt_videos += 1;
            for (sum, &k) in recall_sums.iter_mut().zip(ks) {
                *sum += recalled.iter().filter(|r| r.is_some_and(|r| r < k)).count() as f64 / gts.len() as f64;
            }
        }
    }
    if gt_videos == 0 {
        return Err(Error::data("no video with a ground-truth relation"));
    }
    let aps: Vec<f64> = gt_count
        .iter()
        .map(|(t, &g)| {
            let mut list: Vec<_> = scored.iter().filter(|s| s.0 == *t).collect();
            list.sort_by(|a, b| b.1.total_cmp(&a.1).then((a.2, a.3).cmp(&(b.2, b.3))));
            brute_force_ap(&list.iter().map(|s| s.4).collect::<Vec<_>>(), g)
        })
        .collect();

    let mut tag_sums = vec![0.0; tag_ks.len()];
    let mut tag_videos = 0usize;
    for g in gt.iter().filter(|g| !g.relations.is_empty()) {
        tag_videos += 1;
        let preds = find(&g.video_id);
        let mut distinct: Vec<Triplet> = Vec::new();
        for p in preds {
            if !distinct.contains(&p.triplet) {
                distinct.push(p.triplet);
            }
        }
        let keys: Vec<f64> = distinct
            .iter()
            .map(|t| preds.iter().filter(|p| p.triplet == *t).map(|p| p.score).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let order = ordered(&keys);
        for (sum, &k) in tag_sums.iter_mut().zip(tag_ks) {
            let correct =
                order.iter().take(k).filter(|&&i| g.relations.iter().any(|r| r.triplet == distinct[i])).count();
            *sum += correct as f64 / k as f64;
        }
    }
    Ok(OracleVidVrd {
        recall: recall_sums.iter().map(|s| s / gt_videos as f64).collect(),
        map: mean(&aps).expect("at least one ground-truth video"),
        tagging: tag_sums.iter().map(|s| s / tag_videos as f64).collect(),
    })
}
