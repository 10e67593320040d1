//! Positive-unlabeled debiasing and evaluation for visual relation prediction.
//!
//! The crate is organised around the pipeline it supports:
//!
//! - [`model`]: boxes, scene graphs, trajectories and the overlap measures
//!   (IoU, volumetric IoU) every other module builds on.
//! - [`pu`]: valid-example matching, label-frequency estimation (offline
//!   averaging and the streaming moving-average estimator) and recovery of
//!   unbiased predicate probabilities.
//! - [`sgg`]: image-level Recall@K, mean Recall@K, graph-constraint handling
//!   and head/middle/tail aggregation.
//! - [`hoi`]: keyframe HOI triplet mAP and trajectory-level relation
//!   detection / tagging metrics.
//! - [`kernels`]: RoIAlign, tube-of-interest pooling and pose/box masks.
//! - [`sim`]: a SCAR data simulator and a brute-force metric oracle.

pub mod error;
pub mod hoi;
pub mod kernels;
pub mod model;
pub mod pu;
pub mod sgg;
pub mod sim;

pub use error::{Error, Result};
pub use model::{BoundingBox, ObjectInstance, PredicateVocabulary, RelationTriple, SceneGraph, Trajectory};
pub use pu::{DlfeState, Estimator, LabelFrequencyEstimate, PairPrediction, PerImagePredictions, ValidExample};
pub use sgg::{EvaluationMode, RankedTriplet, RecallReport};
