//! Dataset ingestion: pre-extracted snippet features, ground-truth segments,
//! and a synthetic generator for desk-scale verification.
//!
//! Features arrive as one T×2d matrix per video (RGB and flow streams already
//! concatenated, or concatenated here via [`concat_streams`]). Annotations are
//! evaluation-only; training never sees them.

mod feat1;
mod ground_truth;
mod synth;

pub use feat1::{load_features, save_features};
pub use ground_truth::{
    load_ground_truth, save_ground_truth, GroundTruth, GtSegment, TimeUnit,
};
pub use synth::{generate_synthetic, SynthConfig};

use crate::error::{Error, Result};
use crate::numerics::RealMatrix;
use std::collections::BTreeSet;

/// Snippet features for one untrimmed video.
#[derive(Debug, Clone, PartialEq)]
pub struct SnippetFeatureSet {
    pub video_id: String,
    pub features: RealMatrix,
}

impl SnippetFeatureSet {
    pub fn new(video_id: impl Into<String>, features: RealMatrix) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::validation("a video needs at least one snippet"));
        }
        Ok(SnippetFeatureSet {
            video_id: video_id.into(),
            features,
        })
    }

    pub fn num_snippets(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }
}

/// An ordered corpus of videos plus the declared number of action classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub videos: Vec<SnippetFeatureSet>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(videos: Vec<SnippetFeatureSet>, num_classes: usize) -> Result<Self> {
        if videos.is_empty() {
            return Err(Error::validation("dataset has no videos"));
        }
        if num_classes < 2 {
            return Err(Error::validation(format!(
                "need at least 2 action classes, got {num_classes}"
            )));
        }
        let dim = videos[0].feature_dim();
        if videos.iter().any(|v| v.feature_dim() != dim) {
            return Err(Error::validation("videos disagree on feature_dim"));
        }
        let mut seen = BTreeSet::new();
        for v in &videos {
            if !seen.insert(v.video_id.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate video id {:?}",
                    v.video_id
                )));
            }
        }
        Ok(Dataset {
            videos,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.videos[0].feature_dim()
    }
}

/// Concatenates per-snippet RGB and flow rows into one T×2d matrix.
pub fn concat_streams(rgb: &RealMatrix, flow: &RealMatrix) -> Result<RealMatrix> {
    if rgb.rows() != flow.rows() || rgb.cols() != flow.cols() {
        return Err(Error::invalid(format!(
            "stream shapes differ: {}x{} vs {}x{}",
            rgb.rows(),
            rgb.cols(),
            flow.rows(),
            flow.cols()
        )));
    }
    Ok(RealMatrix::from_fn(rgb.rows(), rgb.cols() * 2, |r, c| {
        if c < rgb.cols() {
            rgb[(r, c)]
        } else {
            flow[(r, c - rgb.cols())]
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use rand::Rng;

    #[test]
    fn concat_streams_d1() {
        let rgb = RealMatrix::from_vec(1, 1, vec![1.0]).unwrap();
        let flow = RealMatrix::from_vec(1, 1, vec![2.0]).unwrap();
        let out = concat_streams(&rgb, &flow).unwrap();
        assert_eq!(out.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn concat_streams_doubles_identical_input() {
        let m = RealMatrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = concat_streams(&m, &m).unwrap();
        assert_eq!(out.row(0), &[1.0, 2.0, 1.0, 2.0]);
        assert_eq!(out.row(1), &[3.0, 4.0, 3.0, 4.0]);
    }

    #[test]
    fn concat_streams_slices_match_originals() {
        let mut rng = SeededRng::new(3);
        let rgb = RealMatrix::from_fn(5, 3, |_, _| rng.random::<f64>());
        let flow = RealMatrix::from_fn(5, 3, |_, _| rng.random::<f64>());
        let out = concat_streams(&rgb, &flow).unwrap();
        for r in 0..5 {
            assert_eq!(&out.row(r)[..3], rgb.row(r));
            assert_eq!(&out.row(r)[3..], flow.row(r));
        }
    }

    #[test]
    fn concat_streams_rejects_mismatch() {
        let a = RealMatrix::zeros(2, 3);
        let b = RealMatrix::zeros(3, 3);
        assert!(concat_streams(&a, &b).is_err());
    }

    #[test]
    fn dataset_rejects_duplicates_and_small_k() {
        let v = |id: &str| {
            SnippetFeatureSet::new(id, RealMatrix::zeros(2, 4)).unwrap()
        };
        assert!(Dataset::new(vec![v("a"), v("a")], 3).is_err());
        assert!(Dataset::new(vec![v("a")], 1).is_err());
        assert!(Dataset::new(vec![], 3).is_err());
    }

    #[test]
    fn dataset_rejects_mixed_dims() {
        let a = SnippetFeatureSet::new("a", RealMatrix::zeros(2, 4)).unwrap();
        let b = SnippetFeatureSet::new("b", RealMatrix::zeros(2, 6)).unwrap();
        assert!(Dataset::new(vec![a, b], 2).is_err());
    }
}
