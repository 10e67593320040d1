//! Seeded tiny instances and their engine-vs-oracle comparison.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle::{brute_force_hoi, brute_force_metrics, brute_force_vidvrd};
use crate::hoi::{
    relation_detection_eval, relation_tagging_precision, CategorySplit, HoiAnnotation, HoiCategory, HoiMatches,
    HoiPairPrediction, KeyframeAnnotation, KeyframePrediction, RelationInstance, Split, Triplet, VideoRelations,
    RARE_THRESHOLD,
};
use crate::model::{BoundingBox, ObjectInstance, PredicateVocabulary, RelationTriple, SceneGraph, Trajectory};
use crate::pu::{PairPrediction, PerImagePredictions};
use crate::sgg::{evaluate_sgg, EvaluationMode, GraphConstraint, SggSample};

const SCORES: [f64; 6] = [0.0, 0.125, 0.25, 0.5, 0.75, 1.0];
const TOLERANCE: f64 = 1e-12;

fn rng_for(seed: u64, domain: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(domain);
    rng
}

fn cell(i: usize) -> BoundingBox {
    let x = 20.0 * i as f64;
    BoundingBox::new(x, 0.0, x + 10.0, 10.0)
}

/// Shifts a box right by 0 or 2 (still a match), or by 6 (IoU 0.25).
fn jitter(rng: &mut ChaCha8Rng, b: BoundingBox) -> BoundingBox {
    let dx = [0.0, 0.0, 2.0, 6.0][rng.gen_range(0..4)];
    BoundingBox::new(b.x0 + dx, b.y0, b.x1 + dx, b.y1)
}

#[derive(Debug, Clone)]
pub struct TinySgg {
    pub mode: EvaluationMode,
    pub num_predicates: usize,
    pub vocab: PredicateVocabulary,
    pub samples: Vec<SggSample>,
}

pub fn tiny_sgg(seed: u64) -> TinySgg {
    let mut rng = rng_for(seed, 1);
    let mode = [EvaluationMode::PredCls, EvaluationMode::SgCls, EvaluationMode::SgDet][rng.gen_range(0..3)];
    let k = rng.gen_range(3..=5);
    let vocab =
        PredicateVocabulary::anonymous((0..k).map(|_| rng.gen_range(0..6)).collect()).expect("valid vocabulary");
    let samples = (0..rng.gen_range(1..=3))
        .map(|i| {
            let id = format!("img{i}");
            let n = rng.gen_range(0..=4);
            let objects: Vec<ObjectInstance> =
                (0..n).map(|j| ObjectInstance::gt(cell(j), rng.gen_range(1..=2))).collect();
            let mut relations = Vec::new();
            for s in 0..n {
                for o in (0..n).filter(|&o| o != s) {
                    for p in 1..=k {
                        if rng.gen_bool(0.2) {
                            relations.push(RelationTriple::new(s, p, o));
                        }
                    }
                }
            }
            let mut ordered_pairs: Vec<(usize, usize)> =
                (0..n).flat_map(|s| (0..n).filter(move |&o| o != s).map(move |o| (s, o))).collect();
            ordered_pairs.shuffle(&mut rng);
            ordered_pairs.truncate(rng.gen_range(0..=ordered_pairs.len()));
            let guess = |rng: &mut ChaCha8Rng, o: &ObjectInstance| {
                let mut out = *o;
                if mode != EvaluationMode::PredCls {
                    out.score = SCORES[rng.gen_range(2..6)];
                    if rng.gen_bool(0.2) {
                        out.label = 3 - o.label;
                    }
                }
                if mode == EvaluationMode::SgDet {
                    out.bbox = jitter(rng, o.bbox);
                }
                out
            };
            let pairs = ordered_pairs
                .into_iter()
                .map(|(s, o)| PairPrediction {
                    subj: guess(&mut rng, &objects[s]),
                    obj: guess(&mut rng, &objects[o]),
                    pred_probs: (0..k).map(|_| SCORES[rng.gen_range(0..6)] / k as f64).collect(),
                    bg_prob: None,
                })
                .collect();
            SggSample {
                gt: SceneGraph { image_id: id.clone(), width: 100.0, height: 10.0, objects, relations },
                predictions: PerImagePredictions { image_id: id, batch_id: None, pairs },
            }
        })
        .collect();
    TinySgg { mode, num_predicates: k, vocab, samples }
}

#[derive(Debug, Clone)]
pub struct TinyHoi {
    pub gt: Vec<KeyframeAnnotation>,
    pub predictions: Vec<KeyframePrediction>,
    pub num_interactions: usize,
    pub cap: usize,
    pub counts: BTreeMap<HoiCategory, u64>,
}

pub fn tiny_hoi(seed: u64) -> TinyHoi {
    let mut rng = rng_for(seed, 2);
    let c = rng.gen_range(1..=2);
    let frames = rng.gen_range(1..=3);
    let mut gt = Vec::new();
    let mut predictions = Vec::new();
    for f in 0..frames {
        let anns: Vec<HoiAnnotation> = (0..rng.gen_range(0..=2))
            .map(|j| {
                let mut interactions: Vec<usize> = (0..c).filter(|_| rng.gen_bool(0.6)).collect();
                if interactions.is_empty() {
                    interactions.push(rng.gen_range(0..c));
                }
                HoiAnnotation {
                    human: cell(2 * j),
                    object: cell(2 * j + 1),
                    object_label: rng.gen_range(1..=2),
                    interactions,
                }
            })
            .collect();
        // One frame in five has predictions but no annotation record.
        if rng.gen_bool(0.8) {
            gt.push(KeyframeAnnotation { video_id: "v".into(), keyframe: f, pairs: anns.clone() });
        }
        let max_pairs = 5 / c;
        let pairs = (0..rng.gen_range(0..=max_pairs))
            .map(|_| {
                let j = rng.gen_range(0..2);
                let mut object = jitter(&mut rng, cell(2 * j + 1));
                if rng.gen_bool(0.15) {
                    // Left half of the cell: IoU exactly 0.5, which must not match.
                    object = BoundingBox::new(object.x0, 0.0, object.x0 + 5.0, 10.0);
                }
                HoiPairPrediction {
                    human: jitter(&mut rng, cell(2 * j)),
                    human_score: SCORES[rng.gen_range(3..6)],
                    object,
                    object_label: anns.get(j).map_or(1, |a| a.object_label),
                    object_score: SCORES[rng.gen_range(3..6)],
                    scores: (0..c).map(|_| SCORES[rng.gen_range(0..6)]).collect(),
                }
            })
            .collect();
        predictions.push(KeyframePrediction { video_id: "v".into(), keyframe: f, pairs });
    }
    let mut counts = BTreeMap::new();
    for p in 0..c {
        for o in 1..=2 {
            counts.insert(HoiCategory { predicate: p, object_class: o }, rng.gen_range(23..=27));
        }
    }
    TinyHoi { gt, predictions, num_interactions: c, cap: rng.gen_range(1..=5), counts }
}

#[derive(Debug, Clone)]
pub struct TinyVrd {
    pub gt: Vec<VideoRelations>,
    pub predictions: Vec<VideoRelations>,
}

fn tube(rng: &mut ChaCha8Rng, slot: usize) -> Trajectory {
    let start = rng.gen_range(0..3);
    let len = rng.gen_range(2..=4);
    let mut boxes: Vec<_> = (0..len).map(|_| rng.gen_bool(0.85).then(|| cell(slot))).collect();
    boxes[0] = Some(cell(slot));
    Trajectory { start_frame: start, boxes }
}

pub fn tiny_vrd(seed: u64) -> TinyVrd {
    let mut rng = rng_for(seed, 3);
    let mut gt = Vec::new();
    let mut predictions = Vec::new();
    for v in 0..rng.gen_range(1..=3) {
        let id = format!("vid{v}");
        let triplet = |rng: &mut ChaCha8Rng| Triplet {
            subject: rng.gen_range(0..2),
            predicate: rng.gen_range(0..2),
            object: rng.gen_range(0..2),
        };
        let g: Vec<RelationInstance> = (0..rng.gen_range(0..=3))
            .map(|i| RelationInstance {
                triplet: triplet(&mut rng),
                subject: tube(&mut rng, 2 * i),
                object: tube(&mut rng, 2 * i + 1),
                score: 1.0,
            })
            .collect();
        let p: Vec<RelationInstance> = (0..rng.gen_range(0..=5))
            .map(|_| {
                let score = SCORES[rng.gen_range(1..6)];
                match g.choose(&mut rng) {
                    Some(src) if rng.gen_bool(0.7) => RelationInstance {
                        triplet: if rng.gen_bool(0.8) { src.triplet } else { triplet(&mut rng) },
                        subject: if rng.gen_bool(0.7) {
                            src.subject.clone()
                        } else {
                            let slot = rng.gen_range(0..6);
                            tube(&mut rng, slot)
                        },
                        object: src.object.shifted(rng.gen_range(0..2)),
                        score,
                    },
                    _ => RelationInstance {
                        triplet: triplet(&mut rng),
                        subject: tube(&mut rng, 0),
                        object: tube(&mut rng, 1),
                        score,
                    },
                }
            })
            .collect();
        if rng.gen_bool(0.9) {
            gt.push(VideoRelations { video_id: id.clone(), relations: g });
        }
        predictions.push(VideoRelations { video_id: id, relations: p });
    }
    TinyVrd { gt, predictions }
}

/// What one case compared.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CaseReport {
    pub values_compared: usize,
    pub bit_equal: usize,
}

struct Checker {
    report: CaseReport,
    errors: Vec<String>,
}

impl Checker {
    fn value(&mut self, what: &str, engine: f64, oracle: f64) {
        self.report.values_compared += 1;
        if engine.to_bits() == oracle.to_bits() {
            self.report.bit_equal += 1;
        } else if (engine - oracle).abs() > TOLERANCE {
            self.errors.push(format!("{what}: engine {engine} vs oracle {oracle}"));
        }
    }

    fn option(&mut self, what: &str, engine: Option<f64>, oracle: Option<f64>) {
        match (engine, oracle) {
            (Some(e), Some(o)) => self.value(what, e, o),
            (None, None) => self.report.values_compared += 1,
            _ => self.errors.push(format!("{what}: engine {engine:?} vs oracle {oracle:?}")),
        }
    }
}

/// Evaluates the tiny SGG, HOI and VidVRD instances of `seed` with the
/// engines and the oracle. `Err` lists every disagreement.
pub fn run_case(seed: u64) -> Result<CaseReport, String> {
    let mut ck = Checker { report: CaseReport::default(), errors: Vec::new() };

    let sgg = tiny_sgg(seed);
    let ks = [1, 2, 5, 20];
    let has_gt = sgg.samples.iter().any(|s| !s.gt.relations.is_empty());
    let engine = evaluate_sgg(&sgg.samples, sgg.mode, sgg.num_predicates, &ks, GraphConstraint::Both, Some(&sgg.vocab));
    let oracle = brute_force_metrics(&sgg.samples, &ks, &[sgg.mode], sgg.num_predicates, Some(&sgg.vocab));
    match (engine, oracle) {
        (Ok(report), Ok(oracle)) => {
            for row in &oracle[0].rows {
                let rows = report.rows(row.graph_constraint).expect("both variants requested");
                let e = rows.iter().find(|r| r.k == row.k).expect("same cutoffs");
                let tag = format!("sgg gc={} K={}", row.graph_constraint, row.k);
                ck.value(&format!("{tag} R"), e.recall, row.recall);
                ck.value(&format!("{tag} mR"), e.mean_recall, row.mean_recall);
                for (r, (a, b)) in e.per_class.iter().zip(&row.per_class).enumerate() {
                    ck.option(&format!("{tag} class {}", r + 1), *a, *b);
                }
                let eb = e.buckets.expect("vocabulary given");
                let ob = row.buckets.expect("vocabulary given");
                ck.option(&format!("{tag} head"), eb.head, ob[0]);
                ck.option(&format!("{tag} middle"), eb.middle, ob[1]);
                ck.option(&format!("{tag} tail"), eb.tail, ob[2]);
            }
        }
        (Err(_), Err(_)) if !has_gt => {}
        (e, o) => ck.errors.push(format!("sgg outcome differs: engine ok={} oracle {:?}", e.is_ok(), o.err())),
    }

    let hoi = tiny_hoi(seed);
    let matches = HoiMatches::compute(&hoi.gt, &hoi.predictions, hoi.num_interactions, hoi.cap)
        .map_err(|e| format!("hoi engine failed: {e}"))?;
    let oracle = brute_force_hoi(&hoi.gt, &hoi.predictions, hoi.num_interactions, hoi.cap, &hoi.counts, RARE_THRESHOLD)
        .map_err(|e| format!("hoi oracle failed: {e}"))?;
    let aps = matches.category_aps();
    if aps.len() != oracle.per_category.len() {
        ck.errors.push(format!("hoi category count {} vs {}", aps.len(), oracle.per_category.len()));
    }
    for ap in &aps {
        ck.option(&format!("hoi AP {:?}", ap.category), Some(ap.ap), oracle.per_category.get(&ap.category).copied());
    }
    let split = CategorySplit::from_counts(hoi.counts.clone());
    for (s, o) in [(Split::Full, oracle.full), (Split::Rare, oracle.rare), (Split::NonRare, oracle.non_rare)] {
        ck.option(&format!("hoi mAP {}", s.as_str()), matches.hoi_map(s, &split).ok().map(|m| m.map), o);
    }
    for (c, (a, b)) in matches.predicate_ap().iter().zip(&oracle.predicate_ap).enumerate() {
        ck.option(&format!("hoi predicate {c} AP"), *a, *b);
    }

    let vrd = tiny_vrd(seed);
    let (ks, tag_ks) = ([1, 2, 5], [1, 2, 3]);
    let det = relation_detection_eval(&vrd.predictions, &vrd.gt, &ks);
    let tags = relation_tagging_precision(&vrd.predictions, &vrd.gt, &tag_ks);
    match (det, tags, brute_force_vidvrd(&vrd.predictions, &vrd.gt, &ks, &tag_ks)) {
        (Ok(det), Ok(tags), Ok(o)) => {
            for (p, v) in det.recall.iter().zip(&o.recall) {
                ck.value(&format!("vrd R@{}", p.k), p.value, *v);
            }
            ck.value("vrd mAP", det.map, o.map);
            for (p, v) in tags.iter().zip(&o.tagging) {
                ck.value(&format!("vrd P@{}", p.k), p.value, *v);
            }
        }
        (Err(_), Err(_), Err(_)) => {}
        (d, t, o) => ck.errors.push(format!(
            "vrd outcome differs: detection ok={} tagging ok={} oracle {:?}",
            d.is_ok(),
            t.is_ok(),
            o.err()
        )),
    }

    if ck.errors.is_empty() {
        Ok(ck.report)
    } else {
        Err(format!("seed {seed}: {}", ck.errors.join("; ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instances_are_reproducible() {
        assert_eq!(tiny_sgg(7).samples, tiny_sgg(7).samples);
        assert_eq!(tiny_hoi(7).predictions, tiny_hoi(7).predictions);
        assert_eq!(tiny_vrd(7).gt, tiny_vrd(7).gt);
    }

    #[test]
    fn first_seeds_agree() {
        for seed in 0..20 {
            run_case(seed).unwrap();
        }
    }
}
