//! SCAR data simulator.
//!
//! Contexts `x` come from a finite set, and every posterior is a ratio of small
//! integers. Each context has a dominant class. A class's prior mass is
//! split evenly over the contexts it dominates, so in deterministic mode the
//! class marginal equals the configured prior exactly.
//!
//! Randomness is counter based: example block `b`, image `i` and context `x`
//! each get their own ChaCha stream, so output never depends on how the
//! work is split up.

pub mod campaign;
pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoundingBox, ObjectInstance, RelationTriple, SceneGraph};
use crate::pu::{PairPrediction, PerImagePredictions};

const EXAMPLE_BLOCK: u64 = 1024;
const SCENE_DOMAIN: u64 = 0x5CE4_E000_0000_0001;
const WEIGHT_DOMAIN: u64 = 0x9E37_79B9_7F4A_7C15;
/// Noise weights of non-dominant classes in stochastic mode lie in 1..=NOISE_MAX.
const NOISE_MAX: u64 = 3;
const PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    /// `y` is a function of `x`: one-hot posteriors.
    #[default]
    Deterministic,
    /// `y` is drawn from a mixed posterior dominated by one class.
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub num_images: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub num_object_classes: usize,
    pub width: u32,
    pub height: u32,
    /// Consecutive images sharing a `batch_id`.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

fn default_batch_size() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub num_predicates: usize,
    /// Prior over classes `0..=K`; class 0 is true background.
    pub class_prior: Vec<f64>,
    /// Labeling propensity `c*_r` of classes `1..=K` (index `r - 1`).
    pub propensities: Vec<f64>,
    pub num_contexts: usize,
    #[serde(default)]
    pub label_mode: LabelMode,
    /// Examples materialized by [`simulate`].
    #[serde(default)]
    pub num_examples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenes: Option<SceneConfig>,
    #[serde(default)]
    pub seed: u64,
}

impl SimConfig {
    /// Uniform prior over `K` foreground classes plus `background` mass on class 0.
    pub fn uniform(propensities: Vec<f64>, background: f64, num_contexts: usize, seed: u64) -> Self {
        let k = propensities.len();
        let mut class_prior = vec![(1.0 - background) / k as f64; k + 1];
        class_prior[0] = background;
        SimConfig {
            num_predicates: k,
            class_prior,
            propensities,
            num_contexts,
            label_mode: LabelMode::Deterministic,
            num_examples: 0,
            scenes: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_predicates;
        if k == 0 {
            return Err(Error::config("num_predicates must be at least 1"));
        }
        if self.class_prior.len() != k + 1 {
            return Err(Error::config(format!(
                "class_prior needs {} entries (background + {k} classes), got {}",
                k + 1,
                self.class_prior.len()
            )));
        }
        if self.class_prior.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::config("class_prior entries must be finite and non-negative"));
        }
        let total: f64 = self.class_prior.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("class_prior sums to {total}, expected 1")));
        }
        if self.propensities.len() != k {
            return Err(Error::config(format!("propensities need {k} entries, got {}", self.propensities.len())));
        }
        if let Some(c) = self.propensities.iter().find(|c| !(**c > 0.0 && **c <= 1.0)) {
            return Err(Error::config(format!("propensity {c} outside (0, 1]")));
        }
        let supported = self.class_prior.iter().filter(|p| **p > 0.0).count();
        if self.num_contexts < supported {
            return Err(Error::config(format!(
                "{supported} classes have prior mass but only {} contexts exist",
                self.num_contexts
            )));
        }
        if let Some(s) = &self.scenes {
            if s.min_objects > s.max_objects {
                return Err(Error::config("min_objects exceeds max_objects"));
            }
            if s.num_object_classes == 0 || s.batch_size == 0 {
                return Err(Error::config("num_object_classes and batch_size must be at least 1"));
            }
            if s.width < 8 || s.height < 8 {
                return Err(Error::config("scene width and height must be at least 8"));
            }
        }
        Ok(())
    }
}

/// A head-heavy propensity profile for demos: geometric from 0.9 down to
/// 0.05 over the classes. Illustrative only, not fitted to any dataset.
pub fn illustrative_propensities(k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![0.9];
    }
    let ratio = (0.05f64 / 0.9).powf(1.0 / (k - 1) as f64);
    (0..k).map(|i| 0.9 * ratio.powi(i as i32)).collect()
}

/// `(x, y, s)`: context, true class and observed label (0 when unlabeled).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimExample {
    pub context: usize,
    pub y: usize,
    pub s: usize,
}

impl SimExample {
    pub fn true_posterior(&self, model: &SimModel) -> Vec<f64> {
        model.true_posterior(self.context)
    }
}

/// The generative model derived from a validated [`SimConfig`].
#[derive(Debug, Clone)]
pub struct SimModel {
    config: SimConfig,
    dominant: Vec<usize>,
    by_class: Vec<Vec<usize>>,
    /// Integer posterior weights per context over classes `0..=K`.
    weights: Vec<Vec<u64>>,
    totals: Vec<u64>,
    prior_cdf: Vec<f64>,
}

impl SimModel {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let k = config.num_predicates;
        let supported: Vec<usize> = (0..=k).filter(|&r| config.class_prior[r] > 0.0).collect();
        let dominant: Vec<usize> = (0..config.num_contexts).map(|x| supported[x % supported.len()]).collect();
        let mut by_class = vec![Vec::new(); k + 1];
        for (x, &c) in dominant.iter().enumerate() {
            by_class[c].push(x);
        }
        let weights: Vec<Vec<u64>> = dominant
            .iter()
            .enumerate()
            .map(|(x, &dom)| match config.label_mode {
                LabelMode::Deterministic => (0..=k).map(|r| u64::from(r == dom)).collect(),
                LabelMode::Stochastic => {
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ WEIGHT_DOMAIN);
                    rng.set_stream(x as u64);
                    (0..=k).map(|r| if r == dom { 2 * (k as u64 + 1) } else { rng.gen_range(1..=NOISE_MAX) }).collect()
                }
            })
            .collect();
        let totals = weights.iter().map(|w| w.iter().sum()).collect();
        let mut acc = 0.0;
        let prior_cdf = config
            .class_prior
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(SimModel { config, dominant, by_class, weights, totals, prior_cdf })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn num_predicates(&self) -> usize {
        self.config.num_predicates
    }

    pub fn num_contexts(&self) -> usize {
        self.config.num_contexts
    }

    pub fn dominant_class(&self, x: usize) -> usize {
        self.dominant[x]
    }

    /// Probability of drawing context `x`.
    pub fn context_probability(&self, x: usize) -> f64 {
        let c = self.dominant[x];
        self.config.class_prior[c] / self.by_class[c].len() as f64
    }

    /// `P(y = r | x)` for `r = 0..=K`.
    pub fn true_posterior(&self, x: usize) -> Vec<f64> {
        let t = self.totals[x] as f64;
        self.weights[x].iter().map(|&w| w as f64 / t).collect()
    }

    /// `P(s = r | x) = c*_r P(y = r | x)` for `r >= 1`; index 0 holds the rest.
    pub fn biased_posterior(&self, x: usize) -> Vec<f64> {
        let t = self.totals[x] as f64;
        let mut out = vec![0.0; self.num_predicates() + 1];
        for (r, c) in self.config.propensities.iter().enumerate() {
            out[r + 1] = c * (self.weights[x][r + 1] as f64 / t);
        }
        out[0] = 1.0 - out[1..].iter().sum::<f64>();
        out
    }

    fn draw_class(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.gen();
        let last = (0..self.prior_cdf.len()).rev().find(|&r| self.config.class_prior[r] > 0.0).unwrap_or(0);
        (0..self.prior_cdf.len()).find(|&r| self.config.class_prior[r] > 0.0 && u < self.prior_cdf[r]).unwrap_or(last)
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> SimExample {
        let c = self.draw_class(rng);
        let members = &self.by_class[c];
        let x = members[rng.gen_range(0..members.len())];
        let y = match self.config.label_mode {
            LabelMode::Deterministic => c,
            LabelMode::Stochastic => {
                let mut u = rng.gen_range(0..self.totals[x]);
                let mut y = 0;
                for (r, &w) in self.weights[x].iter().enumerate() {
                    if u < w {
                        y = r;
                        break;
                    }
                    u -= w;
                }
                y
            }
        };
        let s = if y != 0 && rng.gen::<f64>() < self.config.propensities[y - 1] { y } else { 0 };
        SimExample { context: x, y, s }
    }

    /// Endless example stream; element `i` is the same however it is reached.
    pub fn examples(&self) -> Examples<'_> {
        Examples { model: self, index: 0, rng: None }
    }
}

pub struct Examples<'a> {
    model: &'a SimModel,
    index: u64,
    rng: Option<ChaCha8Rng>,
}

impl Iterator for Examples<'_> {
    type Item = SimExample;

    fn next(&mut self) -> Option<SimExample> {
        if self.index.is_multiple_of(EXAMPLE_BLOCK) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.model.config.seed);
            rng.set_stream(self.index / EXAMPLE_BLOCK);
            self.rng = Some(rng);
        }
        self.index += 1;
        let rng = self.rng.as_mut().expect("block stream set above");
        Some(self.model.draw(rng))
    }
}

pub fn oracle_biased_posterior(x: usize, model: &SimModel) -> Vec<f64> {
    model.biased_posterior(x)
}

pub fn oracle_true_posterior(x: usize, model: &SimModel) -> Vec<f64> {
    model.true_posterior(x)
}

/// One synthetic image.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    /// Ground truth after PU dropping.
    pub gt: SceneGraph,
    pub full: SceneGraph,
    /// Oracle-biased prediction for every ordered object pair.
    pub predictions: PerImagePredictions,
    /// Context of each pair, in prediction order.
    pub contexts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub config: SimConfig,
    pub examples: Vec<SimExample>,
    pub images: Vec<RenderedImage>,
}

/// Materializes `num_examples` examples and, when configured, the scenes.
pub fn simulate(config: SimConfig) -> Result<SyntheticCorpus> {
    let model = SimModel::new(config)?;
    let examples = model.examples().take(model.config.num_examples).collect();
    let images = if model.config.scenes.is_some() { render_scene_corpus(&model)? } else { Vec::new() };
    Ok(SyntheticCorpus { config: model.config, examples, images })
}

fn place_boxes(rng: &mut ChaCha8Rng, n: usize, width: u32, height: u32) -> Result<Vec<BoundingBox>> {
    let mut placed: Vec<BoundingBox> = Vec::with_capacity(n);
    let (min_w, max_w) = ((width / 10).max(2), (width / 3).max(3));
    let (min_h, max_h) = ((height / 10).max(2), (height / 3).max(3));
    for _ in 0..n {
        let mut found = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let w = rng.gen_range(min_w..=max_w);
            let h = rng.gen_range(min_h..=max_h);
            let x0 = rng.gen_range(0..=width - w);
            let y0 = rng.gen_range(0..=height - h);
            let b = BoundingBox::new(x0 as f64, y0 as f64, (x0 + w) as f64, (y0 + h) as f64);
            if placed.iter().all(|p| p.iou(&b) < 0.5) {
                found = Some(b);
                break;
            }
        }
        placed.push(found.ok_or_else(|| {
            Error::config(format!("could not place {n} boxes with IoU below 0.5 on a {width}x{height} image"))
        })?);
    }
    Ok(placed)
}

/// Renders the configured scenes: random boxes, a context per ordered
/// object pair, full-truth relations drawn from `P(y|x)`, labels dropped
/// through `c*`, and oracle-biased predictions on the ground-truth boxes.
pub fn render_scene_corpus(model: &SimModel) -> Result<Vec<RenderedImage>> {
    let scenes =
        model.config.scenes.as_ref().ok_or_else(|| Error::config("no scene settings in the simulator config"))?;
    (0..scenes.num_images)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ SCENE_DOMAIN);
            rng.set_stream(i as u64);
            let n = rng.gen_range(scenes.min_objects..=scenes.max_objects);
            let objects: Vec<ObjectInstance> = place_boxes(&mut rng, n, scenes.width, scenes.height)?
                .into_iter()
                .map(|b| ObjectInstance::gt(b, rng.gen_range(1..=scenes.num_object_classes)))
                .collect();
            let image_id = format!("img{i:06}");
            let mut full = Vec::new();
            let mut dropped = Vec::new();
            let mut pairs = Vec::new();
            let mut contexts = Vec::new();
            for s in 0..n {
                for o in (0..n).filter(|&o| o != s) {
                    let ex = model.draw(&mut rng);
                    if ex.y != 0 {
                        full.push(RelationTriple::new(s, ex.y, o));
                    }
                    if ex.s != 0 {
                        dropped.push(RelationTriple::new(s, ex.s, o));
                    }
                    let biased = model.biased_posterior(ex.context);
                    pairs.push(PairPrediction {
                        subj: objects[s],
                        obj: objects[o],
                        pred_probs: biased[1..].to_vec(),
                        bg_prob: Some(biased[0]),
                    });
                    contexts.push(ex.context);
                }
            }
            let graph = |relations| SceneGraph {
                image_id: image_id.clone(),
                width: scenes.width as f64,
                height: scenes.height as f64,
                objects: objects.clone(),
                relations,
            };
            Ok(RenderedImage {
                gt: graph(dropped),
                full: graph(full),
                predictions: PerImagePredictions {
                    image_id: image_id.clone(),
                    batch_id: Some((i / scenes.batch_size) as u64),
                    pairs,
                },
                contexts,
            })
        })
        .collect()
}
