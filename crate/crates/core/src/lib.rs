//! Unsupervised temporal action localization by iterative feedback clustering.
//!
//! The pipeline alternates between clustering attention-weighted video
//! features, refining cluster confidences with k-reciprocal re-ranking,
//! selecting an easy-first subset of pseudo-labeled videos, and training a
//! snippet-level localization head on that subset. After the final iteration
//! the trained head produces temporal proposals that are scored against
//! ground truth with mAP and NMI.
//!
//! Modules mirror the pipeline stages:
//! - [`numerics`]: dense matrices, seeded RNG streams, Adam, shared math.
//! - [`dataset`]: feature/annotation I/O and the synthetic benchmark.
//! - [`clustering`]: attention-weighted aggregation and k-means.
//! - [`cci`]: k-reciprocal Jaccard refinement of cluster confidences.
//! - [`curriculum`]: pseudo-labels, self-paced selection, epoch scheduling.
//! - [`localizer`]: the two-layer localization head, mining and training.
//! - [`inference`]: proposal generation, NMS, mAP and NMI evaluation.
//! - [`pipeline`]: the end-to-end iterative driver and report emission.

pub mod cci;
pub mod clustering;
pub mod curriculum;
pub mod dataset;
pub mod error;
pub mod inference;
pub mod localizer;
pub mod numerics;
pub mod pipeline;

pub use error::{Error, Result};
