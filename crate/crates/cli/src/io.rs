//! JSON Lines readers and writers, input validation on load, and digests.
//!
//! Every reader streams: records are parsed one line at a time and blank
//! lines are ignored. Errors carry the 1-based line number.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Lines, Read, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sgdebias::model::validate_scene_graph;
use sgdebias::{PerImagePredictions, SceneGraph};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Total-probability slack accepted on load; records inside it are
/// renormalized.
pub const LOAD_TOLERANCE: f64 = 1e-2;
/// Totals closer to 1 than this are left untouched so that written values
/// read back bit-identically.
const RENORMALIZE_ABOVE: f64 = 1e-9;

pub struct JsonlReader<T> {
    path: PathBuf,
    lines: Lines<BufReader<File>>,
    line: usize,
    _record: PhantomData<T>,
}

pub fn open_jsonl<T: DeserializeOwned>(path: &Path) -> Result<JsonlReader<T>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(JsonlReader { path: path.to_path_buf(), lines: BufReader::new(file).lines(), line: 0, _record: PhantomData })
}

impl<T> JsonlReader<T> {
    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl<T: DeserializeOwned> Iterator for JsonlReader<T> {
    /// (line number, record)
    type Item = Result<(usize, T)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(CliError::io(&self.path, e))),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            return Some(
                serde_json::from_str(&text)
                    .map(|r| (self.line, r))
                    .map_err(|e| CliError::record(&self.path, self.line, format!("invalid record: {e}"))),
            );
        }
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    open_jsonl(path)?.map(|r| r.map(|(_, v)| v)).collect()
}

pub struct JsonlWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        Ok(JsonlWriter { path: path.to_path_buf(), out: BufWriter::new(file) })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, record).map_err(|e| CliError::io(&self.path, e.into()))?;
        self.out.write_all(b"\n").map_err(|e| CliError::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, records: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let mut w = JsonlWriter::create(path)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::record(path, e.line(), format!("invalid JSON: {e}")))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::io(path, e.into()))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Checks one ground-truth graph; `Err` holds the violations.
pub fn check_graph(g: &SceneGraph, num_predicates: Option<usize>) -> std::result::Result<(), String> {
    let violations = validate_scene_graph(g, num_predicates);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
    }
}

/// Validates every pair of a prediction record against `num_predicates`
/// and renormalizes totals that are off by less than [`LOAD_TOLERANCE`].
pub fn check_predictions(rec: &mut PerImagePredictions, num_predicates: usize) -> std::result::Result<(), String> {
    for (i, pair) in rec.pairs.iter_mut().enumerate() {
        pair.check(num_predicates, LOAD_TOLERANCE).map_err(|e| format!("pair {i}: {e}"))?;
        let total: f64 = pair.pred_probs.iter().chain(pair.bg_prob.iter()).sum();
        let off = match pair.bg_prob {
            Some(_) => (total - 1.0).abs() > RENORMALIZE_ABOVE,
            None => total > 1.0 + RENORMALIZE_ABOVE,
        };
        if off && total > 0.0 {
            pair.pred_probs.iter_mut().for_each(|p| *p /= total);
            if let Some(bg) = pair.bg_prob.as_mut() {
                *bg /= total;
            }
        }
    }
    Ok(())
}

/// Number of predicate classes, fixed by the first pair that is seen.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClassCount(pub Option<usize>);

impl ClassCount {
    fn settle(&mut self, rec: &PerImagePredictions) -> Option<usize> {
        if self.0.is_none() {
            self.0 = rec.pairs.first().map(|p| p.pred_probs.len());
        }
        self.0
    }
}

/// A streaming loader that validates as it goes. With `lenient` set,
/// records failing validation are skipped and counted; malformed JSON is
/// always fatal.
pub struct Loader<T> {
    reader: JsonlReader<T>,
    lenient: bool,
    pub skipped: usize,
    pub classes: ClassCount,
}

impl<T: DeserializeOwned> Loader<T> {
    pub fn open(path: &Path, lenient: bool, classes: ClassCount) -> Result<Self> {
        Ok(Loader { reader: open_jsonl(path)?, lenient, skipped: 0, classes })
    }
}

pub fn load_ground_truth(path: &Path, num_predicates: Option<usize>, lenient: bool) -> Result<Loader<SceneGraph>> {
    Loader::open(path, lenient, ClassCount(num_predicates))
}

pub fn load_predictions(
    path: &Path,
    num_predicates: Option<usize>,
    lenient: bool,
) -> Result<Loader<PerImagePredictions>> {
    Loader::open(path, lenient, ClassCount(num_predicates))
}

impl Iterator for Loader<SceneGraph> {
    type Item = Result<SceneGraph>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let (line, g) = match self.reader.next()? {
                Ok(r) => r,
                Err(e) => return Some(Err(e)),
            };
            match check_graph(&g, self.classes.0) {
                Ok(()) => return Some(Ok(g)),
                Err(_) if self.lenient => self.skipped += 1,
                Err(msg) => return Some(Err(CliError::record(self.reader.path(), line, msg))),
            }
        }
    }
}

impl Iterator for Loader<PerImagePredictions> {
    type Item = Result<PerImagePredictions>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let (line, mut rec) = match self.reader.next()? {
                Ok(r) => r,
                Err(e) => return Some(Err(e)),
            };
            let checked = match self.classes.settle(&rec) {
                Some(k) => check_predictions(&mut rec, k),
                None => Ok(()),
            };
            match checked {
                Ok(()) => return Some(Ok(rec)),
                Err(_) if self.lenient => self.skipped += 1,
                Err(msg) => return Some(Err(CliError::record(self.reader.path(), line, msg))),
            }
        }
    }
}

/// Ground truth and predictions read in lockstep; line `i` of both files
/// must describe the same image. An invalid record under `lenient` drops
/// the whole pair.
pub struct Paired {
    gt: JsonlReader<SceneGraph>,
    preds: JsonlReader<PerImagePredictions>,
    lenient: bool,
    pub classes: ClassCount,
    pub skipped: usize,
}

impl Paired {
    pub fn open(gt: &Path, preds: &Path, classes: ClassCount, lenient: bool) -> Result<Self> {
        Ok(Paired { gt: open_jsonl(gt)?, preds: open_jsonl(preds)?, lenient, classes, skipped: 0 })
    }

    /// Reads up to `n` pairs.
    pub fn chunk(&mut self, n: usize) -> Result<Vec<(SceneGraph, PerImagePredictions)>> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            match self.next() {
                Some(r) => out.push(r?),
                None => break,
            }
        }
        Ok(out)
    }
}

impl Iterator for Paired {
    type Item = Result<(SceneGraph, PerImagePredictions)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let (g, p) = match (self.gt.next(), self.preds.next()) {
                (None, None) => return None,
                (Some(Err(e)), _) | (_, Some(Err(e))) => return Some(Err(e)),
                (Some(Ok(g)), Some(Ok(p))) => (g, p),
                (Some(Ok((line, _))), None) => {
                    return Some(Err(CliError::Usage(format!(
                        "{} has a record at line {line} with no matching prediction record",
                        self.gt.path().display()
                    ))))
                }
                (None, Some(Ok((line, _)))) => {
                    return Some(Err(CliError::Usage(format!(
                        "{} has a record at line {line} with no matching ground-truth record",
                        self.preds.path().display()
                    ))))
                }
            };
            let ((gl, graph), (pl, mut rec)) = (g, p);
            if graph.image_id != rec.image_id {
                return Some(Err(CliError::Usage(format!(
                    "ground truth line {gl} is image {:?} but prediction line {pl} is {:?}; both files must list images in the same order",
                    graph.image_id, rec.image_id
                ))));
            }
            let k = self.classes.settle(&rec);
            let problem =
                check_graph(&graph, k).map_err(|m| CliError::record(self.gt.path(), gl, m)).and_then(|_| match k {
                    Some(k) => check_predictions(&mut rec, k).map_err(|m| CliError::record(self.preds.path(), pl, m)),
                    None => Ok(()),
                });
            match problem {
                Ok(()) => return Some(Ok((graph, rec))),
                Err(_) if self.lenient => self.skipped += 1,
                Err(e) => return Some(Err(e)),
            }
        }
    }
}
