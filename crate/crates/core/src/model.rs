//! Shared data model: boxes, objects, scene graphs, trajectories and the
//! overlap measures used by the matching code.
//!
//! Boxes are continuous corner coordinates. Area is `(x1 - x0) * (y1 - y0)`
//! with no "+1" pixel convention. Predicate classes in scene graphs are
//! 1-based (`1..=K`); index 0 is reserved for "no relationship".

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl From<[f64; 4]> for BoundingBox {
    fn from(c: [f64; 4]) -> Self {
        BoundingBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl BoundingBox {
    /// Builds a box without checking the corner ordering; see [`BoundingBox::try_new`].
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BoundingBox { x0, y0, x1, y1 }
    }

    pub fn try_new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let b = BoundingBox::new(x0, y0, x1, y1);
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::data(format!("invalid box {b}")))
        }
    }

    /// The box covering a whole `width x height` image.
    pub fn full_image(width: f64, height: f64) -> Self {
        BoundingBox::new(0.0, 0.0, width, height)
    }

    pub fn is_valid(&self) -> bool {
        [self.x0, self.y0, self.x1, self.y1].iter().all(|v| v.is_finite()) && self.x0 <= self.x1 && self.y0 <= self.y1
    }

    pub fn width(&self) -> f64 {
        (self.x1 - self.x0).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y1 - self.y0).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x1.min(other.x1) - self.x0.max(other.x0);
        let h = self.y1.min(other.y1) - self.y0.max(other.y0);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Intersection over union; 0 when both boxes are degenerate.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }

    /// True when the box lies inside `[0, width] x [0, height]`.
    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x0 >= 0.0 && self.y0 >= 0.0 && self.x1 <= width && self.y1 <= height
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x0, self.y0, self.x1, self.y1)
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    a.iou(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub label: usize,
    #[serde(default = "one")]
    pub score: f64,
}

fn one() -> f64 {
    1.0
}

impl ObjectInstance {
    pub fn new(bbox: BoundingBox, label: usize, score: f64) -> Self {
        ObjectInstance { bbox, label, score }
    }

    /// A ground-truth object: score 1.
    pub fn gt(bbox: BoundingBox, label: usize) -> Self {
        ObjectInstance { bbox, label, score: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationTriple {
    pub subj: usize,
    pub pred: usize,
    pub obj: usize,
}

impl RelationTriple {
    pub fn new(subj: usize, pred: usize, obj: usize) -> Self {
        RelationTriple { subj, pred, obj }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub image_id: String,
    pub width: f64,
    pub height: f64,
    pub objects: Vec<ObjectInstance>,
    #[serde(default)]
    pub relations: Vec<RelationTriple>,
}

impl SceneGraph {
    /// Number of ground-truth relations per predicate class, indexed `0..=K`.
    pub fn predicate_counts(&self, num_predicates: usize) -> Vec<u64> {
        let mut counts = vec![0; num_predicates + 1];
        for rel in &self.relations {
            if rel.pred <= num_predicates {
                counts[rel.pred] += 1;
            }
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateVocabulary {
    pub names: Vec<String>,
    pub train_frequency: Vec<u64>,
    #[serde(default)]
    pub background_index: Option<usize>,
}

impl PredicateVocabulary {
    pub fn new(names: Vec<String>, train_frequency: Vec<u64>) -> Result<Self> {
        let vocab = PredicateVocabulary { names, train_frequency, background_index: Some(0) };
        vocab.validate()?;
        Ok(vocab)
    }

    /// Placeholder names `pred_1..pred_K` with the given frequencies.
    pub fn anonymous(train_frequency: Vec<u64>) -> Result<Self> {
        let names = (1..=train_frequency.len()).map(|r| format!("pred_{r}")).collect();
        PredicateVocabulary::new(names, train_frequency)
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.is_empty() {
            return Err(Error::data("predicate vocabulary is empty"));
        }
        if self.names.len() != self.train_frequency.len() {
            return Err(Error::data(format!(
                "vocabulary has {} names but {} frequencies",
                self.names.len(),
                self.train_frequency.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &self.names {
            if !seen.insert(name) {
                return Err(Error::data(format!("duplicate predicate name {name:?}")));
            }
        }
        Ok(())
    }

    pub fn num_predicates(&self) -> usize {
        self.names.len()
    }

    /// Name of 1-based predicate class `r`.
    pub fn name(&self, r: usize) -> Option<&str> {
        r.checked_sub(1).and_then(|i| self.names.get(i)).map(String::as_str)
    }

    /// 1-based classes sorted by training frequency, most frequent first;
    /// ties go to the lower class index.
    pub fn classes_by_frequency(&self) -> Vec<usize> {
        let mut classes: Vec<usize> = (1..=self.num_predicates()).collect();
        classes.sort_by(|&a, &b| self.train_frequency[b - 1].cmp(&self.train_frequency[a - 1]).then(a.cmp(&b)));
        classes
    }
}

/// Per-frame boxes of one object, starting at `start_frame`. `None` marks a
/// frame where the object is not visible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start_frame: i64,
    pub boxes: Vec<Option<BoundingBox>>,
}

impl Trajectory {
    pub fn new(start_frame: i64, boxes: Vec<Option<BoundingBox>>) -> Result<Self> {
        let t = Trajectory { start_frame, boxes };
        if t.boxes.iter().all(Option::is_none) {
            return Err(Error::data("trajectory has no present box"));
        }
        if let Some(b) = t.boxes.iter().flatten().find(|b| !b.is_valid()) {
            return Err(Error::data(format!("trajectory contains invalid box {b}")));
        }
        Ok(t)
    }

    /// A trajectory with the same box on `len` consecutive frames.
    pub fn constant(start_frame: i64, bbox: BoundingBox, len: usize) -> Self {
        Trajectory { start_frame, boxes: vec![Some(bbox); len] }
    }

    /// One past the last frame covered by `boxes`.
    pub fn end_frame(&self) -> i64 {
        self.start_frame + self.boxes.len() as i64
    }

    pub fn box_at(&self, frame: i64) -> Option<&BoundingBox> {
        if frame < self.start_frame {
            return None;
        }
        self.boxes.get((frame - self.start_frame) as usize).and_then(Option::as_ref)
    }

    pub fn present_frames(&self) -> impl Iterator<Item = i64> + '_ {
        self.boxes.iter().enumerate().filter(|(_, b)| b.is_some()).map(move |(i, _)| self.start_frame + i as i64)
    }

    pub fn shifted(&self, offset: i64) -> Self {
        Trajectory { start_frame: self.start_frame + offset, boxes: self.boxes.clone() }
    }
}

/// Volumetric IoU: summed per-frame intersection over summed per-frame
/// union, over every frame where at least one trajectory has a box.
pub fn viou(a: &Trajectory, b: &Trajectory) -> f64 {
    let lo = a.start_frame.min(b.start_frame);
    let hi = a.end_frame().max(b.end_frame());
    let mut inter = 0.0;
    let mut union = 0.0;
    for frame in lo..hi {
        match (a.box_at(frame), b.box_at(frame)) {
            (Some(ba), Some(bb)) => {
                let i = ba.intersection_area(bb);
                inter += i;
                union += ba.area() + bb.area() - i;
            }
            (Some(only), None) | (None, Some(only)) => union += only.area(),
            (None, None) => {}
        }
    }
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Re-expresses `traj` over the segment `[segment_start, segment_start + len)`,
/// replacing every missing frame with the full-image box.
pub fn fill_trajectory(
    traj: &Trajectory,
    segment_start: i64,
    len: usize,
    width: f64,
    height: f64,
) -> Result<Trajectory> {
    if len == 0 {
        return Err(Error::usage("segment length must be at least 1"));
    }
    let full = BoundingBox::full_image(width, height);
    let boxes = (0..len as i64).map(|i| Some(traj.box_at(segment_start + i).copied().unwrap_or(full))).collect();
    Ok(Trajectory { start_frame: segment_start, boxes })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    ObjectIndexOutOfRange { index: usize },
    SelfRelation,
    PredicateOutOfRange { pred: usize },
    DuplicateRelation,
    InvalidBox,
    BoxOutOfBounds,
    ScoreOutOfRange,
    InvalidImageSize,
}

/// One invariant breach found by [`validate_scene_graph`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub location: String,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match &self.kind {
            ViolationKind::ObjectIndexOutOfRange { index } => {
                format!("object index {index} out of range")
            }
            ViolationKind::SelfRelation => "subject and object are the same object".into(),
            ViolationKind::PredicateOutOfRange { pred } => format!("predicate {pred} out of range"),
            ViolationKind::DuplicateRelation => "duplicate relation".into(),
            ViolationKind::InvalidBox => "box corners are not ordered or not finite".into(),
            ViolationKind::BoxOutOfBounds => "box lies outside the image".into(),
            ViolationKind::ScoreOutOfRange => "score outside [0, 1]".into(),
            ViolationKind::InvalidImageSize => "image size must be positive and finite".into(),
        };
        write!(f, "{}: {}", self.location, what)
    }
}

/// Lists every invariant breach in `g`. When `num_predicates` is given,
/// predicate indices above it are also reported.
pub fn validate_scene_graph(g: &SceneGraph, num_predicates: Option<usize>) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |location: String, kind| out.push(Violation { location, kind });
    if !(g.width.is_finite() && g.height.is_finite() && g.width > 0.0 && g.height > 0.0) {
        push("image".into(), ViolationKind::InvalidImageSize);
    }
    for (i, o) in g.objects.iter().enumerate() {
        if !o.bbox.is_valid() {
            push(format!("objects[{i}]"), ViolationKind::InvalidBox);
        } else if !o.bbox.within(g.width, g.height) {
            push(format!("objects[{i}]"), ViolationKind::BoxOutOfBounds);
        }
        if !(0.0..=1.0).contains(&o.score) {
            push(format!("objects[{i}]"), ViolationKind::ScoreOutOfRange);
        }
    }
    let mut seen = HashSet::new();
    for (i, rel) in g.relations.iter().enumerate() {
        let loc = format!("relations[{i}]");
        for index in [rel.subj, rel.obj] {
            if index >= g.objects.len() {
                push(loc.clone(), ViolationKind::ObjectIndexOutOfRange { index });
            }
        }
        if rel.subj == rel.obj {
            push(loc.clone(), ViolationKind::SelfRelation);
        }
        if rel.pred == 0 || num_predicates.is_some_and(|k| rel.pred > k) {
            push(loc.clone(), ViolationKind::PredicateOutOfRange { pred: rel.pred });
        }
        if !seen.insert(*rel) {
            push(loc, ViolationKind::DuplicateRelation);
        }
    }
    out
}
