//! One function per subcommand.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sgdebias::hoi::{
    relation_detection_eval, relation_tagging_precision, CategorySplit, HoiCategory, HoiMatches, KeyframeAnnotation,
    KeyframePrediction, MapResult, RecallPoint, RelationDetectionReport, Split, TemporalSpatialMap, VideoRelations,
};
use sgdebias::pu::{fill_missing, match_valid_pairs, Debiaser, TrainEst};
use sgdebias::sgg::{GraphConstraint, SggEvaluator};
use sgdebias::sim::{render_scene_corpus, SimConfig, SimModel};
use sgdebias::{
    DlfeState, Estimator, EvaluationMode, LabelFrequencyEstimate, PerImagePredictions, PredicateVocabulary,
    RecallReport, SceneGraph,
};

use crate::error::{CliError, Result};
use crate::io::{
    check_graph, create_dir, load_predictions, read_json, read_jsonl, write_json, ClassCount, JsonlWriter, Paired,
};
use crate::report::{
    write_ap_per_category, write_label_freq, write_per_class_recall, write_report, CategoryRow, Report, RunMetadata,
    TOOL,
};
use crate::{DebiasArgs, EstimateArgs, EvalHoiArgs, EvalSggArgs, EvalVidvrdArgs, SimulateArgs};

/// Records handed to the worker pool at a time. Results are merged in
/// input order, so the value only affects memory use.
const CHUNK: usize = 256;

fn parse_mode(s: &str) -> Result<EvaluationMode> {
    Ok(EvaluationMode::from_str(s)?)
}

#[derive(Serialize)]
struct SimMeta<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a SimConfig,
    images: usize,
    examples: usize,
    full_relations: usize,
    labeled_relations: usize,
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut config: SimConfig = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let model = SimModel::new(config)?;
    create_dir(&args.out)?;

    let images = if model.config().scenes.is_some() { render_scene_corpus(&model)? } else { Vec::new() };
    let k = model.num_predicates();
    let mut gt = JsonlWriter::create(&args.out.join("gt.jsonl"))?;
    let mut full = JsonlWriter::create(&args.out.join("gt_full.jsonl"))?;
    let mut preds = JsonlWriter::create(&args.out.join("preds.jsonl"))?;
    let mut labeled = vec![0u64; k];
    let (mut n_full, mut n_labeled) = (0, 0);
    for img in &images {
        gt.write(&img.gt)?;
        full.write(&img.full)?;
        preds.write(&img.predictions)?;
        for r in &img.gt.relations {
            labeled[r.pred - 1] += 1;
        }
        n_full += img.full.relations.len();
        n_labeled += img.gt.relations.len();
    }
    gt.finish()?;
    full.finish()?;
    preds.finish()?;

    let n_examples = model.config().num_examples;
    if n_examples > 0 {
        let mut ex = JsonlWriter::create(&args.out.join("examples.jsonl"))?;
        for e in model.examples().take(n_examples) {
            ex.write(&e)?;
        }
        ex.finish()?;
    }
    write_json(&args.out.join("vocab.json"), &PredicateVocabulary::anonymous(labeled)?)?;
    write_json(
        &args.out.join("sim_meta.json"),
        &SimMeta {
            tool: TOOL,
            version: env!("CARGO_PKG_VERSION"),
            config: model.config(),
            images: images.len(),
            examples: n_examples,
            full_relations: n_full,
            labeled_relations: n_labeled,
        },
    )?;
    println!(
        "simulated {} images ({n_full} relations, {n_labeled} labeled) and {n_examples} examples into {}",
        images.len(),
        args.out.display()
    );
    Ok(())
}

/// Per-class sums of biased probabilities over one record's valid examples.
fn record_sums(g: &SceneGraph, p: &PerImagePredictions, k: usize) -> Result<(Vec<f64>, Vec<u64>)> {
    let mut sums = vec![0.0; k];
    let mut counts = vec![0u64; k];
    for ex in match_valid_pairs(p, g)? {
        sums[ex.label - 1] += ex.biased_prob();
        counts[ex.label - 1] += 1;
    }
    Ok((sums, counts))
}

enum Accumulator {
    TrainEst(TrainEst),
    Dlfe { state: DlfeState, batch: Option<Option<u64>>, sums: Vec<f64>, counts: Vec<u64> },
}

impl Accumulator {
    fn add(&mut self, batch_id: Option<u64>, sums: &[f64], counts: &[u64]) {
        match self {
            Accumulator::TrainEst(acc) => acc.add_sums(sums, counts),
            Accumulator::Dlfe { state, batch, sums: bs, counts: bc } => {
                // A record without batch_id is a batch of its own.
                let same = batch_id.is_some() && *batch == Some(batch_id);
                if !same {
                    if batch.is_some() {
                        state.update_with_sums(bs, bc);
                    }
                    bs.iter_mut().for_each(|v| *v = 0.0);
                    bc.iter_mut().for_each(|v| *v = 0);
                    *batch = Some(batch_id);
                }
                bs.iter_mut().zip(sums).for_each(|(a, b)| *a += b);
                bc.iter_mut().zip(counts).for_each(|(a, b)| *a += b);
            }
        }
    }

    fn finish(self) -> Result<LabelFrequencyEstimate> {
        match self {
            Accumulator::TrainEst(acc) => Ok(acc.finish()),
            Accumulator::Dlfe { mut state, batch, sums, counts } => {
                if batch.is_some() {
                    state.update_with_sums(&sums, &counts);
                }
                Ok(state.finalize()?)
            }
        }
    }
}

pub fn estimate(args: &EstimateArgs) -> Result<()> {
    let method = match args.method.as_str() {
        "dlfe" => Estimator::Dlfe,
        "train-est" => Estimator::TrainEst,
        other => return Err(CliError::Usage(format!("--method must be dlfe or train-est, got {other:?}"))),
    };
    let mode = parse_mode(&args.mode)?;
    // Validates alpha before any input is read.
    DlfeState::new(1, args.alpha)?;

    let mut paired = Paired::open(&args.gt, &args.preds, ClassCount::default(), args.lenient)?;
    let mut acc: Option<Accumulator> = None;
    loop {
        let chunk = paired.chunk(CHUNK)?;
        if chunk.is_empty() {
            break;
        }
        // Until the first pair fixes K no record can hold a valid example.
        let Some(k) = paired.classes.0 else { continue };
        let partial: Vec<(Vec<f64>, Vec<u64>)> =
            chunk.par_iter().map(|(g, p)| record_sums(g, p, k)).collect::<Result<_>>()?;
        let acc = acc.get_or_insert_with(|| match method {
            Estimator::TrainEst => Accumulator::TrainEst(TrainEst::new(k)),
            Estimator::Dlfe => Accumulator::Dlfe {
                state: DlfeState::new(k, args.alpha).expect("alpha checked above"),
                batch: None,
                sums: vec![0.0; k],
                counts: vec![0; k],
            },
        });
        for ((_, p), (s, c)) in chunk.iter().zip(&partial) {
            acc.add(p.batch_id, s, c);
        }
    }
    let acc = acc.ok_or_else(|| CliError::Core(sgdebias::Error::Data("no predicted pair in the trace".into())))?;
    let mut est = acc.finish()?.with_mode(mode.as_str());
    if args.fill_missing {
        est = fill_missing(&est)?;
    }
    write_json(&args.out, &est)?;
    if let Some(csv) = &args.csv {
        write_label_freq(csv, &est)?;
    }
    let unset = est.c.iter().filter(|c| c.is_none()).count();
    println!(
        "estimated {} label frequencies ({unset} unset, {} records skipped) into {}",
        est.c.len(),
        paired.skipped,
        args.out.display()
    );
    Ok(())
}

pub fn debias(args: &DebiasArgs) -> Result<()> {
    let est: LabelFrequencyEstimate = read_json(&args.freq)?;
    let debiaser = Debiaser::new(&est, !args.no_renormalize)?;
    let mut reader = load_predictions(&args.preds, Some(est.num_predicates()), args.lenient)?;
    let mut out = JsonlWriter::create(&args.out)?;
    let mut written = 0usize;
    loop {
        let chunk: Vec<PerImagePredictions> = reader.by_ref().take(CHUNK).collect::<Result<_>>()?;
        if chunk.is_empty() {
            break;
        }
        let recovered: Vec<PerImagePredictions> = chunk
            .into_par_iter()
            .map(|rec| {
                let pairs = rec.pairs.iter().map(|p| debiaser.recover(p)).collect::<sgdebias::Result<_>>()?;
                Ok(PerImagePredictions { pairs, ..rec })
            })
            .collect::<Result<_>>()?;
        for rec in &recovered {
            out.write(rec)?;
        }
        written += recovered.len();
    }
    out.finish()?;
    println!("debiased {written} records ({} skipped) into {}", reader.skipped, args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalSggConfig<'a> {
    mode: EvaluationMode,
    k: &'a [usize],
    graph_constraint: GraphConstraint,
    lenient: bool,
}

#[derive(Serialize)]
struct SggResults<'a> {
    images_read: usize,
    recall: &'a RecallReport,
}

pub fn eval_sgg(args: &EvalSggArgs) -> Result<()> {
    let mode = parse_mode(&args.mode)?;
    let gc = GraphConstraint::from_str(&args.graph_constraint)?;
    let vocab: Option<PredicateVocabulary> = args.vocab.as_deref().map(read_json).transpose()?;
    if let Some(v) = &vocab {
        v.validate()?;
    }
    let freq: Option<LabelFrequencyEstimate> = args.freq.as_deref().map(read_json).transpose()?;

    let known = vocab.as_ref().map(PredicateVocabulary::num_predicates);
    let mut paired = Paired::open(&args.gt, &args.preds, ClassCount(known), args.lenient)?;
    // Without a vocabulary the class count comes from the first predicted
    // pair; records read before it was known are re-checked.
    let mut pending = Vec::new();
    while paired.classes.0.is_none() {
        let chunk = paired.chunk(CHUNK)?;
        if chunk.is_empty() {
            break;
        }
        pending.extend(chunk);
    }
    let k = paired.classes.0.ok_or_else(|| {
        CliError::Usage("cannot infer the number of predicate classes (no predicted pair); pass --vocab".into())
    })?;
    for (g, _) in &pending {
        check_graph(g, Some(k))
            .map_err(|m| CliError::Core(sgdebias::Error::Data(format!("image {:?}: {m}", g.image_id))))?;
    }

    let mut ev = SggEvaluator::new(mode, k, &args.k, gc)?;
    let mut images = 0usize;
    let mut chunk = pending;
    loop {
        if chunk.is_empty() {
            chunk = paired.chunk(CHUNK)?;
            if chunk.is_empty() {
                break;
            }
        }
        let outcomes: Vec<_> = chunk.par_iter().map(|(g, p)| ev.outcome(g, &p.pairs)).collect();
        outcomes.iter().for_each(|o| ev.add(o));
        images += chunk.len();
        chunk.clear();
    }
    let report = ev.finish(vocab.as_ref())?;

    create_dir(&args.out)?;
    let config = EvalSggConfig { mode, k: &args.k, graph_constraint: gc, lenient: args.lenient };
    let mut inputs: Vec<&Path> = vec![&args.gt, &args.preds];
    inputs.extend(args.vocab.as_deref());
    inputs.extend(args.freq.as_deref());
    write_report(
        &args.out,
        &Report {
            metadata: RunMetadata::new("eval-sgg", &config, &inputs)?,
            config: &config,
            skipped_records: paired.skipped,
            results: SggResults { images_read: images, recall: &report },
        },
    )?;
    write_per_class_recall(&args.out.join("per_class_recall.csv"), &report, vocab.as_ref())?;
    if let Some(f) = &freq {
        write_label_freq(&args.out.join("label_freq.csv"), f)?;
    }
    for (label, rows) in [("", report.constrained.as_deref()), ("ng-", report.unconstrained.as_deref())] {
        for r in rows.unwrap_or(&[]) {
            println!("{label}R@{k} {:.4}  {label}mR@{k} {:.4}", r.recall, r.mean_recall, k = r.k);
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct TagRow {
    interaction: usize,
    temporal: String,
}

fn read_temporal_tags(path: &Path, num_interactions: usize) -> Result<Vec<bool>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e.into()))?;
    let mut tags: Vec<Option<bool>> = vec![None; num_interactions];
    for (i, row) in rdr.deserialize::<TagRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| CliError::record(path, line, e.to_string()))?;
        let value = match row.temporal.trim() {
            "1" | "true" | "temporal" => true,
            "0" | "false" | "spatial" => false,
            other => return Err(CliError::record(path, line, format!("temporal must be 0/1, got {other:?}"))),
        };
        match tags.get_mut(row.interaction) {
            Some(slot @ None) => *slot = Some(value),
            Some(Some(_)) => {
                return Err(CliError::Usage(format!(
                    "interaction {} tagged twice in {}",
                    row.interaction,
                    path.display()
                )))
            }
            None => {
                return Err(CliError::Usage(format!(
                    "{} tags interaction {} but there are {num_interactions}",
                    path.display(),
                    row.interaction
                )))
            }
        }
    }
    tags.iter()
        .enumerate()
        .map(|(c, t)| t.ok_or_else(|| CliError::Usage(format!("{} leaves interaction {c} untagged", path.display()))))
        .collect()
}

#[derive(Deserialize)]
struct CountRow {
    predicate: usize,
    object_class: usize,
    count: u64,
}

fn read_category_counts(path: &Path) -> Result<BTreeMap<HoiCategory, u64>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e.into()))?;
    let mut out = BTreeMap::new();
    for (i, row) in rdr.deserialize::<CountRow>().enumerate() {
        let row = row.map_err(|e| CliError::record(path, i + 2, e.to_string()))?;
        out.insert(HoiCategory { predicate: row.predicate, object_class: row.object_class }, row.count);
    }
    Ok(out)
}

#[derive(Serialize)]
struct EvalHoiConfig<'a> {
    splits: &'a [String],
    top_k: usize,
    num_interactions: usize,
}

#[derive(Serialize)]
struct HoiResults {
    keyframes_annotated: usize,
    keyframes_predicted: usize,
    maps: BTreeMap<&'static str, Option<MapSummary>>,
    predicate_ap: Vec<Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    temporal_spatial: Option<TemporalSpatialMap>,
}

#[derive(Serialize)]
struct MapSummary {
    map: f64,
    categories: usize,
}

impl From<&MapResult> for MapSummary {
    fn from(m: &MapResult) -> Self {
        MapSummary { map: m.map, categories: m.per_category.len() }
    }
}

pub fn eval_hoi(args: &EvalHoiArgs) -> Result<()> {
    let splits: Vec<Split> = args.splits.iter().map(|s| Split::parse(s)).collect::<sgdebias::Result<_>>()?;
    if args.top_k == 0 {
        return Err(CliError::Usage("--top-k must be at least 1".into()));
    }
    let gt: Vec<KeyframeAnnotation> = read_jsonl(&args.gt)?;
    let preds: Vec<KeyframePrediction> = read_jsonl(&args.preds)?;
    let c = preds
        .iter()
        .flat_map(|k| k.pairs.first())
        .map(|p| p.scores.len())
        .next()
        .or_else(|| gt.iter().flat_map(|k| &k.pairs).flat_map(|p| p.interactions.iter().map(|c| c + 1)).max())
        .ok_or_else(|| CliError::Usage("cannot infer the number of interaction classes from empty inputs".into()))?;
    let temporal = args.temporal_tags.as_deref().map(|p| read_temporal_tags(p, c)).transpose()?;
    let split = match &args.category_counts {
        Some(p) => CategorySplit::from_counts(read_category_counts(p)?),
        None => CategorySplit::from_annotations(&gt),
    };

    let matches = HoiMatches::compute(&gt, &preds, c, args.top_k)?;
    let full = matches.hoi_map(Split::Full, &split)?;
    let mut maps = BTreeMap::new();
    for s in &splits {
        maps.insert(s.as_str(), matches.hoi_map(*s, &split).ok().as_ref().map(MapSummary::from));
    }
    let temporal_spatial = temporal.as_deref().map(|t| matches.temporal_spatial_map(t)).transpose()?;

    create_dir(&args.out)?;
    let config = EvalHoiConfig { splits: &args.splits, top_k: args.top_k, num_interactions: c };
    let mut inputs: Vec<&Path> = vec![&args.gt, &args.preds];
    inputs.extend(args.temporal_tags.as_deref());
    inputs.extend(args.category_counts.as_deref());
    write_report(
        &args.out,
        &Report {
            metadata: RunMetadata::new("eval-hoi", &config, &inputs)?,
            config: &config,
            skipped_records: 0,
            results: HoiResults {
                keyframes_annotated: gt.len(),
                keyframes_predicted: preds.len(),
                maps,
                predicate_ap: matches.predicate_ap(),
                temporal_spatial,
            },
        },
    )?;
    let rows: Vec<CategoryRow<'_>> = full
        .per_category
        .iter()
        .map(|ap| CategoryRow {
            ap,
            train_count: split.count(&ap.category),
            rare: split.is_rare(&ap.category),
            temporal: temporal.as_ref().map(|t| t[ap.category.predicate]),
        })
        .collect();
    write_ap_per_category(&args.out.join("ap_per_category.csv"), &rows)?;
    println!("mAP full {:.4} over {} categories", full.map, full.per_category.len());
    Ok(())
}

#[derive(Serialize)]
struct EvalVidvrdConfig<'a> {
    k: &'a [usize],
    tag_k: &'a [usize],
}

#[derive(Serialize)]
struct VidvrdResults {
    detection: RelationDetectionReport,
    tagging: Vec<RecallPoint>,
}

pub fn eval_vidvrd(args: &EvalVidvrdArgs) -> Result<()> {
    if args.k.contains(&0) {
        return Err(CliError::Usage("--k values must be at least 1".into()));
    }
    let gt: Vec<VideoRelations> = read_jsonl(&args.gt)?;
    let preds: Vec<VideoRelations> = read_jsonl(&args.preds)?;
    let detection = relation_detection_eval(&preds, &gt, &args.k)?;
    let tagging = relation_tagging_precision(&preds, &gt, &args.tag_k)?;

    create_dir(&args.out)?;
    let config = EvalVidvrdConfig { k: &args.k, tag_k: &args.tag_k };
    for p in &detection.recall {
        println!("R@{} {:.4}", p.k, p.value);
    }
    println!("mAP {:.4}", detection.map);
    for p in &tagging {
        println!("P@{} {:.4}", p.k, p.value);
    }
    write_report(
        &args.out,
        &Report {
            metadata: RunMetadata::new("eval-vidvrd", &config, &[&args.gt, &args.preds])?,
            config: &config,
            skipped_records: 0,
            results: VidvrdResults { detection, tagging },
        },
    )
}
