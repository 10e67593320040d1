//! Report bundles: `report.json` plus plot-ready CSV tables.
//!
//! Everything written here is a pure function of the inputs and the run
//! configuration. Inputs are identified by file name and SHA-256, never by
//! absolute path or timestamp, and floats use the shortest decimal that
//! reads back to the same `f64`.

use std::path::Path;

use serde::Serialize;
use sgdebias::hoi::CategoryAp;
use sgdebias::sgg::{class_buckets, RecallReport};
use sgdebias::{LabelFrequencyEstimate, PredicateVocabulary};

use crate::error::{CliError, Result};
use crate::io::{sha256_bytes, sha256_file, write_json};

pub const TOOL: &str = "sgdebias";

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_hash: String,
    pub inputs: Vec<InputDigest>,
}

impl RunMetadata {
    pub fn new<C: Serialize>(command: &'static str, config: &C, inputs: &[&Path]) -> Result<Self> {
        let canonical =
            serde_json::to_vec(config).map_err(|e| CliError::Usage(format!("unserializable config: {e}")))?;
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(InputDigest {
                    name: p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned()),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(RunMetadata {
            tool: TOOL,
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_hash: sha256_bytes(&canonical),
            inputs,
        })
    }
}

#[derive(Debug, Serialize)]
pub struct Report<'a, C: Serialize, R: Serialize> {
    pub metadata: RunMetadata,
    pub config: &'a C,
    pub skipped_records: usize,
    pub results: R,
}

pub fn write_report<C: Serialize, R: Serialize>(dir: &Path, report: &Report<'_, C, R>) -> Result<()> {
    write_json(&dir.join("report.json"), report)
}

fn num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::io(path, e.into()))
}

fn csv_row(w: &mut csv::Writer<std::fs::File>, path: &Path, row: &[String]) -> Result<()> {
    w.write_record(row).map_err(|e| CliError::io(path, e.into()))
}

fn csv_done(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

/// `class,name,train_freq_rank,bucket,R@K...,ng-R@K...`; rank and bucket
/// are blank without a vocabulary.
pub fn write_per_class_recall(path: &Path, report: &RecallReport, vocab: Option<&PredicateVocabulary>) -> Result<()> {
    let mut w = csv_writer(path)?;
    let constrained = report.constrained.as_deref().unwrap_or(&[]);
    let unconstrained = report.unconstrained.as_deref().unwrap_or(&[]);
    let mut header: Vec<String> = ["class", "name", "train_freq_rank", "bucket"].map(String::from).to_vec();
    header.extend(constrained.iter().map(|r| format!("R@{}", r.k)));
    header.extend(unconstrained.iter().map(|r| format!("ng-R@{}", r.k)));
    csv_row(&mut w, path, &header)?;

    let k = report.num_predicates;
    let (ranks, buckets) = match vocab {
        Some(v) => {
            let mut ranks = vec![0; k];
            for (i, class) in v.classes_by_frequency().into_iter().enumerate() {
                ranks[class - 1] = i + 1;
            }
            (Some(ranks), Some(class_buckets(v)?))
        }
        None => (None, None),
    };
    for r in 1..=k {
        let mut row = vec![
            r.to_string(),
            vocab.and_then(|v| v.name(r)).map_or_else(|| format!("pred_{r}"), String::from),
            ranks.as_ref().map(|x| x[r - 1].to_string()).unwrap_or_default(),
            buckets.as_ref().map(|b| b[r - 1].as_str().to_string()).unwrap_or_default(),
        ];
        row.extend(constrained.iter().chain(unconstrained).map(|row| num(row.per_class[r - 1])));
        csv_row(&mut w, path, &row)?;
    }
    csv_done(w, path)
}

/// `class,c,valid_count`
pub fn write_label_freq(path: &Path, est: &LabelFrequencyEstimate) -> Result<()> {
    let mut w = csv_writer(path)?;
    csv_row(&mut w, path, &["class", "c", "valid_count"].map(String::from))?;
    for (i, (c, n)) in est.c.iter().zip(&est.valid_counts).enumerate() {
        csv_row(&mut w, path, &[(i + 1).to_string(), num(*c), n.to_string()])?;
    }
    csv_done(w, path)
}

/// One row of `ap_per_category.csv`.
pub struct CategoryRow<'a> {
    pub ap: &'a CategoryAp,
    pub train_count: u64,
    pub rare: bool,
    pub temporal: Option<bool>,
}

/// `predicate,object_class,gt_count,train_count,split,kind,ap`
pub fn write_ap_per_category(path: &Path, rows: &[CategoryRow<'_>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    csv_row(
        &mut w,
        path,
        &["predicate", "object_class", "gt_count", "train_count", "split", "kind", "ap"].map(String::from),
    )?;
    for r in rows {
        let kind = match r.temporal {
            Some(true) => "temporal",
            Some(false) => "spatial",
            None => "",
        };
        csv_row(
            &mut w,
            path,
            &[
                r.ap.category.predicate.to_string(),
                r.ap.category.object_class.to_string(),
                r.ap.gt_count.to_string(),
                r.train_count.to_string(),
                if r.rare { "rare" } else { "non-rare" }.to_string(),
                kind.to_string(),
                r.ap.ap.to_string(),
            ],
        )?;
    }
    csv_done(w, path)
}
