//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines appear in order on stdout.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgdebias::hoi::{
    average_precision, top100_filter, top_k_filter, CategorySplit, HoiAnnotation, HoiCategory, HoiMatches,
    HoiPairPrediction, KeyframeAnnotation, KeyframePrediction, RelationInstance, Triplet, VideoRelations,
    HOI_MATCH_IOU, KEYFRAME_TOP_K, RARE_THRESHOLD, VIOU_THRESHOLD,
};
use sgdebias::kernels::{naive_temporal_roi, roi_align, toi_pool, FeatureMap, FeatureVolume, RoiAlignParams};
use sgdebias::pu::{match_valid_pairs, recover_unbiased, TrainEst, VALID_EXAMPLE_IOU};
use sgdebias::sgg::{bucket_sizes, evaluate_sgg, GraphConstraint, SggSample};
use sgdebias::sim::campaign::run_case;
use sgdebias::sim::{
    illustrative_propensities, oracle_biased_posterior, oracle_true_posterior, render_scene_corpus, LabelMode,
    SceneConfig, SimConfig, SimModel,
};
use sgdebias::{
    BoundingBox, DlfeState, Estimator, EvaluationMode, LabelFrequencyEstimate, ObjectInstance, PairPrediction,
    PerImagePredictions, PredicateVocabulary, RelationTriple, SceneGraph, Trajectory,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 1. Label-frequency estimation accuracy on a deterministic-label stream.

fn scar_estimation() -> Outcome {
    const K: usize = 20;
    const PER_CLASS: usize = 100_000;
    const BATCHES: usize = 500;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let c_star: Vec<f64> = (0..K).map(|_| rng.gen_range(0.05..=0.95)).collect();
    // A prior proportional to 1/c* gives every class the same labeled rate.
    let inv: f64 = c_star.iter().map(|c| 1.0 / c).sum();
    let mut prior = vec![0.0];
    prior.extend(c_star.iter().map(|c| 1.0 / c / inv));
    let config = SimConfig {
        num_predicates: K,
        class_prior: prior,
        propensities: c_star.clone(),
        num_contexts: 200,
        label_mode: LabelMode::Deterministic,
        num_examples: 0,
        scenes: None,
        seed: 7,
    };
    let model = SimModel::new(config).map_err(|e| e.to_string())?;
    let biased: Vec<Vec<f64>> = (0..model.num_contexts()).map(|x| oracle_biased_posterior(x, &model)).collect();

    // Labeled examples per class, in stream order, capped at PER_CLASS.
    let mut labeled: Vec<Vec<f64>> = (0..K).map(|_| Vec::with_capacity(PER_CLASS)).collect();
    let mut filled = 0;
    for ex in model.examples() {
        if ex.s == 0 || labeled[ex.s - 1].len() == PER_CLASS {
            continue;
        }
        labeled[ex.s - 1].push(biased[ex.context][ex.s]);
        if labeled[ex.s - 1].len() == PER_CLASS {
            filled += 1;
            if filled == K {
                break;
            }
        }
    }

    let per_batch = PER_CLASS / BATCHES;
    let mut te = TrainEst::new(K);
    let mut dlfe = DlfeState::new(K, 0.1).map_err(|e| e.to_string())?;
    for b in 0..BATCHES {
        let sums: Vec<f64> = labeled.iter().map(|v| v[b * per_batch..(b + 1) * per_batch].iter().sum()).collect();
        let counts = vec![per_batch as u64; K];
        te.add_sums(&sums, &counts);
        dlfe.update_with_sums(&sums, &counts);
    }
    let err = |est: &LabelFrequencyEstimate| -> Result<f64, String> {
        let v = est.values().map_err(|e| e.to_string())?;
        Ok(v.iter().zip(&c_star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    };
    let te_err = err(&te.finish())?;
    let dlfe_err = err(&dlfe.finalize().map_err(|e| e.to_string())?)?;
    let secs = start.elapsed().as_secs_f64();
    check(
        te_err <= 0.02 && dlfe_err <= 0.02 && secs <= 30.0,
        format!("max error train-est {te_err:.2e}, dlfe {dlfe_err:.2e}; {secs:.1} s"),
    )
}

// 2. Exact recovery of the true posterior from the biased one.

fn exact_recovery() -> Outcome {
    let mut worst = 0.0f64;
    for mode in [LabelMode::Deterministic, LabelMode::Stochastic] {
        let k = 20;
        let mut config = SimConfig::uniform(illustrative_propensities(k), 0.2, 100, 3);
        config.label_mode = mode;
        let model = SimModel::new(config).map_err(|e| e.to_string())?;
        let c = LabelFrequencyEstimate::from_values(Estimator::TrainEst, &model.config().propensities);
        let obj = ObjectInstance::gt(BoundingBox::new(0.0, 0.0, 1.0, 1.0), 1);
        for x in 0..model.num_contexts() {
            let b = oracle_biased_posterior(x, &model);
            let pair = PairPrediction { subj: obj, obj, pred_probs: b[1..].to_vec(), bg_prob: Some(b[0]) };
            let q = recover_unbiased(&pair, &c, true).map_err(|e| e.to_string())?;
            let t = oracle_true_posterior(x, &model);
            let fg: f64 = t[1..].iter().sum();
            for (a, b) in q.pred_probs.iter().zip(&t[1..]) {
                worst = worst.max((a - b / fg).abs());
            }
        }
    }
    check(worst <= 1e-9, format!("max deviation {worst:.2e} over 2 x 100 contexts"))
}

// 3. Debiasing improves mean and tail recall and reaches the Bayes ranking.

fn debiasing_direction() -> Outcome {
    let k = 10;
    let props = illustrative_propensities(k);
    let ratio = props[0] / props[k - 1];
    let mut config = SimConfig::uniform(props.clone(), 0.0, 200, 11);
    config.label_mode = LabelMode::Stochastic;
    config.scenes = Some(SceneConfig {
        num_images: 400,
        min_objects: 2,
        max_objects: 4,
        num_object_classes: 8,
        width: 320,
        height: 240,
        batch_size: 8,
    });
    let model = SimModel::new(config).map_err(|e| e.to_string())?;
    let images = render_scene_corpus(&model).map_err(|e| e.to_string())?;
    let mut labeled = vec![0u64; k];
    for img in &images {
        for r in &img.gt.relations {
            labeled[r.pred - 1] += 1;
        }
    }
    let vocab = PredicateVocabulary::anonymous(labeled).map_err(|e| e.to_string())?;
    let c = LabelFrequencyEstimate::from_values(Estimator::TrainEst, &props);

    let build = |f: &dyn Fn(&PairPrediction, usize) -> PairPrediction| -> Vec<SggSample> {
        images
            .iter()
            .map(|img| SggSample {
                gt: img.full.clone(),
                predictions: PerImagePredictions {
                    pairs: img.predictions.pairs.iter().zip(&img.contexts).map(|(p, &x)| f(p, x)).collect(),
                    ..img.predictions.clone()
                },
            })
            .collect()
    };
    let biased = build(&|p, _| p.clone());
    let recovered = build(&|p, _| recover_unbiased(p, &c, true).expect("complete estimate"));
    let bayes = build(&|p, x| {
        let t = oracle_true_posterior(x, &model);
        let fg: f64 = t[1..].iter().sum();
        PairPrediction { pred_probs: t[1..].iter().map(|v| v / fg).collect(), bg_prob: None, ..p.clone() }
    });
    let eval = |s: &[SggSample]| {
        evaluate_sgg(s, EvaluationMode::PredCls, k, &[20], GraphConstraint::On, Some(&vocab))
            .map(|r| r.constrained.expect("constrained rows")[0].clone())
            .map_err(|e| e.to_string())
    };
    let (b, r, o) = (eval(&biased)?, eval(&recovered)?, eval(&bayes)?);
    let tail = |row: &sgdebias::sgg::RecallAtK| row.buckets.as_ref().and_then(|x| x.tail).unwrap_or(f64::NAN);
    check(
        ratio >= 10.0
            && r.mean_recall > b.mean_recall
            && tail(&r) > tail(&b)
            && (r.mean_recall - o.mean_recall).abs() <= 1e-6,
        format!(
            "c* ratio {ratio:.0}x; mR@20 biased {:.4} -> recovered {:.4} (Bayes {:.4}); tail {:.4} -> {:.4}",
            b.mean_recall,
            r.mean_recall,
            o.mean_recall,
            tail(&b),
            tail(&r)
        ),
    )
}

// 4. Metric engines against the brute-force oracle.

fn oracle_equivalence() -> Outcome {
    let (mut values, mut bit_equal) = (0, 0);
    for seed in 0..200 {
        let report = run_case(seed).map_err(|e| format!("seed {seed}: {e}"))?;
        values += report.values_compared;
        bit_equal += report.bit_equal;
    }
    Ok(format!("200 instances, {values} values agree ({bit_equal} bit-equal, rest within 1e-12)"))
}

// 5. Moving-average contraction towards a constant batch mean.

fn dlfe_contraction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checks = 0;
    for alpha in [0.05, 0.1, 0.5] {
        for _ in 0..20 {
            let k = 3;
            let start: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.0)).collect();
            let target: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut st = DlfeState::new(k, alpha).map_err(|e| e.to_string())?;
            st.update_with_sums(&start, &[1; 3]);
            for n in 2..=60 {
                st.update_with_sums(&target, &[1; 3]);
                for r in 0..k {
                    let got = st.running()[r].expect("seeded");
                    let bound = (1.0 - alpha).powi(n - 1) * (start[r] - target[r]).abs();
                    if (got - target[r]).abs() > bound + 1e-12 {
                        return Err(format!(
                            "alpha {alpha}, batch {n}: gap {} above bound {bound}",
                            (got - target[r]).abs()
                        ));
                    }
                    checks += 1;
                }
            }
        }
    }
    Ok(format!("{checks} bounds hold over 3 momenta x 20 starts"))
}

// 6. Tube pooling versus the pool-then-align baseline.

fn random_volume(rng: &mut ChaCha8Rng, d: usize, t: usize, h: usize, w: usize) -> FeatureVolume {
    let data = (0..d * t * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FeatureVolume::new(d, t, h, w, data).expect("sizes match")
}

fn random_box(rng: &mut ChaCha8Rng, h: usize, w: usize) -> BoundingBox {
    let x0 = rng.gen_range(0.0..w as f64 - 2.0);
    let y0 = rng.gen_range(0.0..h as f64 - 2.0);
    BoundingBox::new(x0, y0, rng.gen_range(x0 + 1.0..=w as f64), rng.gen_range(y0 + 1.0..=h as f64))
}

fn toi_pooling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = RoiAlignParams::new(3, 3);
    let mut static_gap = 0.0f64;
    for _ in 0..100 {
        let (t, h, w) = (rng.gen_range(1..6), rng.gen_range(4..12), rng.gen_range(4..12));
        let vol = random_volume(&mut rng, 2, t, h, w);
        let b = random_box(&mut rng, h, w);
        let tube = Trajectory::new(0, vec![Some(b); t]).map_err(|e| e.to_string())?;
        let a = toi_pool(&vol, &tube, params).map_err(|e| e.to_string())?;
        let n = naive_temporal_roi(&vol, &b, params).map_err(|e| e.to_string())?;
        static_gap = static_gap.max(a.max_abs_diff(&n));
    }

    let vol =
        FeatureVolume::from_fn(1, 2, 4, 8, |_, _, _, x| if x < 4 { 0.0 } else { 10.0 }).map_err(|e| e.to_string())?;
    let left = BoundingBox::new(0.5, 0.5, 3.5, 3.5);
    let right = BoundingBox::new(4.5, 0.5, 7.5, 3.5);
    let moving = Trajectory::new(0, vec![Some(left), Some(right)]).map_err(|e| e.to_string())?;
    let one = RoiAlignParams::new(1, 1);
    let tube = toi_pool(&vol, &moving, one).map_err(|e| e.to_string())?.data[0];
    let naive = naive_temporal_roi(&vol, &left, one).map_err(|e| e.to_string())?.data[0];

    let mut linear_gap = 0.0f64;
    for _ in 0..100 {
        let (t, h, w) = (rng.gen_range(1..5), rng.gen_range(4..10), rng.gen_range(4..10));
        let (v1, v2) = (random_volume(&mut rng, 2, t, h, w), random_volume(&mut rng, 2, t, h, w));
        let (a, b) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let traj = Trajectory::new(0, (0..t).map(|_| Some(random_box(&mut rng, h, w))).collect())
            .map_err(|e| e.to_string())?;
        let mixed =
            toi_pool(&v1.combine(a, &v2, b).map_err(|e| e.to_string())?, &traj, params).map_err(|e| e.to_string())?;
        let p1 = toi_pool(&v1, &traj, params).map_err(|e| e.to_string())?;
        let p2 = toi_pool(&v2, &traj, params).map_err(|e| e.to_string())?;
        for i in 0..mixed.data.len() {
            linear_gap = linear_gap.max((mixed.data[i] - (a * p1.data[i] + b * p2.data[i])).abs());
        }
    }
    check(
        static_gap <= 1e-6 && tube == 5.0 && naive == 0.0 && linear_gap <= 1e-6,
        format!("static gap {static_gap:.1e}; moving box tube {tube} vs naive {naive}; linearity gap {linear_gap:.1e}"),
    )
}

// 7. RoIAlign reproduces affine fields at the box center.

fn roi_align_affine() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (h, w) = (rng.gen_range(6..32), rng.gen_range(6..32));
        let (a, b, c) = (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        let f = |x: f64, y: f64| a * x + b * y + c;
        // Pixel (i, j) holds the field at its center.
        let data = (0..h * w).map(|i| f((i % w) as f64 + 0.5, (i / w) as f64 + 0.5)).collect();
        let map = FeatureMap::new(1, h, w, data).map_err(|e| e.to_string())?;
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let hw = rng.gen_range(0.25..cx - 0.5);
        let hh = rng.gen_range(0.25..cy - 0.5);
        let roi = BoundingBox::new(cx - hw, cy - hh, cx + hw, cy + hh);
        let out = roi_align(&map, &roi, RoiAlignParams::new(1, 1)).map_err(|e| e.to_string())?;
        worst = worst.max((out.data[0] - f(cx, cy)).abs());
    }
    check(worst <= 1e-6, format!("max deviation {worst:.1e} over 50 fields"))
}

// 8. Average precision fixture and invariance to monotone score maps.

fn ap_fixtures() -> Outcome {
    let fixture = average_precision(&[true, false, true], 2).map_err(|e| e.to_string())?;
    if (fixture - 0.8333).abs() > 1e-4 || (fixture - 5.0 / 6.0).abs() > 1e-9 {
        return Err(format!("[TP, FP, TP] over 2 GT gave {fixture}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for list in 0..100 {
        let num_c = rng.gen_range(1..4);
        let human = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
        let n_gt = rng.gen_range(1..5);
        let gt_pairs: Vec<HoiAnnotation> = (0..n_gt)
            .map(|g| HoiAnnotation {
                human,
                object: BoundingBox::new(20.0 * (g + 1) as f64, 0.0, 20.0 * (g + 1) as f64 + 10.0, 10.0),
                object_label: 1,
                interactions: (0..num_c).filter(|_| rng.gen_bool(0.6)).collect(),
            })
            .collect();
        let preds: Vec<HoiPairPrediction> = (0..rng.gen_range(1..8))
            .map(|_| {
                let g = rng.gen_range(0..n_gt + 1) as f64;
                HoiPairPrediction {
                    human,
                    human_score: 1.0,
                    object: BoundingBox::new(20.0 * g, 0.0, 20.0 * g + 10.0, 10.0),
                    object_label: 1,
                    object_score: 1.0,
                    scores: (0..num_c).map(|_| rng.gen_range(0.01..1.0)).collect(),
                }
            })
            .collect();
        let gt = vec![KeyframeAnnotation { video_id: "v".into(), keyframe: 0, pairs: gt_pairs }];
        let squashed: Vec<HoiPairPrediction> = preds
            .iter()
            .map(|p| HoiPairPrediction { scores: p.scores.iter().map(|s| s * s * s).collect(), ..p.clone() })
            .collect();
        let frame = |pairs| vec![KeyframePrediction { video_id: "v".into(), keyframe: 0, pairs }];
        let a = HoiMatches::compute(&gt, &frame(preds), num_c, KEYFRAME_TOP_K).map_err(|e| e.to_string())?;
        let b = HoiMatches::compute(&gt, &frame(squashed), num_c, KEYFRAME_TOP_K).map_err(|e| e.to_string())?;
        if a.category_aps() != b.category_aps() {
            return Err(format!("list {list}: AP changed under a monotone score map"));
        }
    }
    Ok(format!("fixture {fixture:.10}; 100 lists unchanged under s -> s^3"))
}

// 9. The CLI pipeline is a pure function of its inputs.

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_sgdebias")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn pipeline(root: &Path, config: &Path, threads: &str) -> Result<Vec<(String, Vec<u8>)>, String> {
    let s = |p: &Path| p.to_str().expect("utf-8 temp path").to_string();
    let sim = root.join("sim");
    let freq = root.join("freq.json");
    let deb = root.join("debiased.jsonl");
    let eval = root.join("eval");
    let runs: [Vec<String>; 4] = [
        vec!["simulate".into(), "--config".into(), s(config), "--out".into(), s(&sim)],
        vec![
            "estimate".into(),
            "--gt".into(),
            s(&sim.join("gt.jsonl")),
            "--preds".into(),
            s(&sim.join("preds.jsonl")),
            "--out".into(),
            s(&freq),
            "--fill-missing".into(),
        ],
        vec![
            "debias".into(),
            "--preds".into(),
            s(&sim.join("preds.jsonl")),
            "--freq".into(),
            s(&freq),
            "--out".into(),
            s(&deb),
        ],
        vec![
            "eval-sgg".into(),
            "--gt".into(),
            s(&sim.join("gt_full.jsonl")),
            "--preds".into(),
            s(&deb),
            "--vocab".into(),
            s(&sim.join("vocab.json")),
            "--freq".into(),
            s(&freq),
            "--out".into(),
            s(&eval),
        ],
    ];
    for args in &runs {
        let mut full = vec!["--threads", threads];
        full.extend(args.iter().map(String::as_str));
        run_cli(&full)?;
    }
    let mut files = Vec::new();
    for dir in [root, &sim, &eval] {
        let mut paths: Vec<_> =
            fs::read_dir(dir).map_err(|e| e.to_string())?.map(|e| e.expect("dir entry").path()).collect();
        paths.retain(|p| p.is_file());
        paths.sort();
        for p in paths {
            let rel = p.strip_prefix(root).expect("under root").display().to_string();
            files.push((rel, fs::read(&p).map_err(|e| e.to_string())?));
        }
    }
    Ok(files)
}

fn pipeline_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("config.json");
    let mut sim = SimConfig::uniform(illustrative_propensities(12), 0.3, 120, 99);
    sim.label_mode = LabelMode::Stochastic;
    sim.num_examples = 1000;
    sim.scenes = Some(SceneConfig {
        num_images: 600,
        min_objects: 2,
        max_objects: 6,
        num_object_classes: 10,
        width: 400,
        height: 300,
        batch_size: 8,
    });
    fs::write(&config, serde_json::to_string(&sim).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let mut bundles = Vec::new();
    for (name, threads) in [("a", "1"), ("b", "1"), ("c", "8")] {
        let root = tmp.path().join(name);
        fs::create_dir(&root).map_err(|e| e.to_string())?;
        bundles.push(pipeline(&root, &config, threads)?);
    }
    for other in &bundles[1..] {
        if other.len() != bundles[0].len() {
            return Err("runs wrote different file sets".into());
        }
        for ((na, a), (nb, b)) in bundles[0].iter().zip(other) {
            if na != nb || a != b {
                return Err(format!("{na} differs from {nb}"));
            }
        }
    }
    Ok(format!("{} files byte-identical across 2 runs and 1 vs 8 threads", bundles[0].len()))
}

// 10. Protocol constants.

fn protocol_constants() -> Outcome {
    let mut problems = Vec::new();
    let cat = HoiCategory { predicate: 0, object_class: 1 };
    let split = |n| CategorySplit::from_counts([(cat, n)].into_iter().collect());
    if !split(24).is_rare(&cat) || split(25).is_rare(&cat) || RARE_THRESHOLD != 25 {
        problems.push("rare threshold".to_string());
    }
    if bucket_sizes(50).ok() != Some((15, 20, 15)) {
        problems.push(format!("buckets at K = 50: {:?}", bucket_sizes(50)));
    }

    let human = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
    let frame = KeyframePrediction {
        video_id: "v".into(),
        keyframe: 0,
        pairs: (0..60)
            .map(|i| HoiPairPrediction {
                human,
                human_score: 1.0,
                object: BoundingBox::new(i as f64, 20.0, i as f64 + 5.0, 25.0),
                object_label: 1,
                object_score: 1.0,
                scores: vec![0.5, 0.25, 0.125],
            })
            .collect(),
    };
    if top100_filter(&frame).len() != 100 || KEYFRAME_TOP_K != 100 || top_k_filter(&frame, 500).len() != 180 {
        problems.push("keyframe cap".into());
    }

    // Each check pairs a box with IoU exactly 0.5 against its reference.
    let a = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
    let half = BoundingBox::new(0.0, 0.0, 5.0, 10.0);
    if half.iou(&a) != 0.5 {
        problems.push("IoU fixture".into());
    }
    let hoi_gt = vec![KeyframeAnnotation {
        video_id: "v".into(),
        keyframe: 0,
        pairs: vec![HoiAnnotation { human: a, object: a, object_label: 1, interactions: vec![0] }],
    }];
    let hoi_pred = |h: BoundingBox| {
        vec![KeyframePrediction {
            video_id: "v".into(),
            keyframe: 0,
            pairs: vec![HoiPairPrediction {
                human: h,
                human_score: 1.0,
                object: a,
                object_label: 1,
                object_score: 1.0,
                scores: vec![1.0],
            }],
        }]
    };
    let hoi_ap = |h| HoiMatches::compute(&hoi_gt, &hoi_pred(h), 1, 100).map(|m| m.category_aps()[0].ap);
    if HOI_MATCH_IOU != 0.5 || hoi_ap(half).ok() != Some(0.0) || hoi_ap(a).ok() != Some(1.0) {
        problems.push("HOI match must be strictly above 0.5".into());
    }

    let sg = SceneGraph {
        image_id: "i".into(),
        width: 100.0,
        height: 20.0,
        objects: vec![ObjectInstance::gt(a, 1), ObjectInstance::gt(BoundingBox::new(50.0, 0.0, 60.0, 10.0), 2)],
        relations: vec![RelationTriple::new(0, 1, 1)],
    };
    let pair = PairPrediction {
        subj: ObjectInstance::gt(half, 1),
        obj: sg.objects[1],
        pred_probs: vec![0.7, 0.3],
        bg_prob: None,
    };
    let preds = PerImagePredictions { image_id: "i".into(), batch_id: None, pairs: vec![pair] };
    let valid = match_valid_pairs(&preds, &sg).map(|v| v.len()).unwrap_or(0);
    let sample = SggSample { gt: sg.clone(), predictions: preds.clone() };
    let recall = evaluate_sgg(&[sample], EvaluationMode::SgDet, 2, &[1], GraphConstraint::On, None)
        .map(|r| r.constrained.expect("constrained rows")[0].recall)
        .unwrap_or(-1.0);
    if VALID_EXAMPLE_IOU != 0.5 || valid != 1 || recall != 1.0 {
        problems.push(format!("SGG matching must accept IoU 0.5 (valid {valid}, recall {recall})"));
    }

    let traj = |b| Trajectory::new(0, vec![Some(b)]).expect("present box");
    let rel = |b| RelationInstance {
        triplet: Triplet { subject: 1, predicate: 1, object: 2 },
        subject: traj(b),
        object: traj(a),
        score: 1.0,
    };
    let videos = |b| vec![VideoRelations { video_id: "v".into(), relations: vec![rel(b)] }];
    let vrd = sgdebias::hoi::relation_detection_eval(&videos(half), &videos(a), &[1]).map(|r| r.recall[0].value);
    if VIOU_THRESHOLD != 0.5 || vrd.as_ref().ok() != Some(&1.0) {
        problems.push(format!("vIoU 0.5 must match ({vrd:?})"));
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            "rare < 25, 15/20/15 at K = 50, top-100 cap, HOI IoU > 0.5, SGG and vIoU >= 0.5".into()
        } else {
            problems.join("; ")
        },
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("label-frequency estimation accuracy", scar_estimation),
        ("exact recovery", exact_recovery),
        ("debiasing direction", debiasing_direction),
        ("metric engines match the oracle", oracle_equivalence),
        ("moving-average contraction", dlfe_contraction),
        ("tube pooling", toi_pooling),
        ("RoIAlign on affine fields", roi_align_affine),
        ("average precision", ap_fixtures),
        ("pipeline determinism", pipeline_determinism),
        ("protocol constants", protocol_constants),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS [{:>2}] {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
