//! Synthetic untrimmed videos with planted action segments.
//!
//! Each class owns an axis-aligned center at distance `separation` from every
//! other class center and from the shared background center. Snippets inside
//! a planted segment are the class center plus isotropic Gaussian noise;
//! background snippets use the background center. Clustering difficulty is
//! then the single ratio separation/noise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, GroundTruth, GtSegment, SnippetFeatureSet, TimeUnit};
use crate::error::{Error, Result};
use crate::numerics::{RealMatrix, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub videos_per_class: usize,
    pub snippets_per_video: usize,
    pub feature_dim: usize,
    /// Euclidean distance between any two class centers (and to background).
    pub separation: f64,
    pub action_noise: f64,
    pub background_noise: f64,
    /// Inclusive range for the number of planted segments per video.
    pub actions_per_video: (usize, usize),
    /// Inclusive range for each segment's length in snippets.
    pub action_length: (usize, usize),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 10,
            videos_per_class: 40,
            snippets_per_video: 50,
            feature_dim: 32,
            separation: 6.0,
            action_noise: 1.0,
            background_noise: 1.0,
            actions_per_video: (2, 3),
            action_length: (8, 12),
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("synthetic data needs at least 2 classes"));
        }
        if self.videos_per_class == 0 || self.snippets_per_video == 0 {
            return Err(Error::invalid("videos_per_class and snippets_per_video must be positive"));
        }
        if self.feature_dim < self.num_classes + 1 {
            return Err(Error::invalid(format!(
                "feature_dim {} too small for {} classes plus background (needs >= {})",
                self.feature_dim,
                self.num_classes,
                self.num_classes + 1
            )));
        }
        if !(self.separation > 0.0) {
            return Err(Error::invalid("separation must be positive"));
        }
        if self.action_noise < 0.0 || self.background_noise < 0.0 {
            return Err(Error::invalid("noise scales must be non-negative"));
        }
        let (a_lo, a_hi) = self.actions_per_video;
        let (l_lo, l_hi) = self.action_length;
        if a_lo == 0 || a_lo > a_hi || l_lo == 0 || l_lo > l_hi {
            return Err(Error::invalid("action count and length ranges must be non-empty"));
        }
        // Worst case: a_hi segments of l_hi snippets with one background
        // snippet between consecutive segments.
        if a_hi * l_hi + (a_hi - 1) > self.snippets_per_video {
            return Err(Error::invalid(format!(
                "up to {a_hi} segments of length {l_hi} cannot fit in {} snippets",
                self.snippets_per_video
            )));
        }
        Ok(())
    }
}

/// Class `k` center: axis `k` scaled so pairwise center distances (including
/// to the background center on axis `num_classes`) all equal `separation`.
fn centers(cfg: &SynthConfig) -> Vec<Vec<f64>> {
    let scale = cfg.separation / std::f64::consts::SQRT_2;
    (0..=cfg.num_classes)
        .map(|k| {
            let mut c = vec![0.0; cfg.feature_dim];
            c[k] = scale;
            c
        })
        .collect()
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(Dataset, GroundTruth)> {
    cfg.validate()?;
    let mut rng = SeededRng::for_purpose(cfg.seed, 0, "synth");
    let centers = centers(cfg);
    let background = &centers[cfg.num_classes];
    let t = cfg.snippets_per_video;

    let mut videos = Vec::new();
    let mut gt = GroundTruth::empty();
    for class in 0..cfg.num_classes {
        for v in 0..cfg.videos_per_class {
            let video_id = format!("synth_{:05}", class * cfg.videos_per_class + v);

            let count = rng.random_range(cfg.actions_per_video.0..=cfg.actions_per_video.1);
            let lengths: Vec<usize> = (0..count)
                .map(|_| rng.random_range(cfg.action_length.0..=cfg.action_length.1))
                .collect();
            let mut free = t - lengths.iter().sum::<usize>() - (count - 1);
            let mut segments = Vec::with_capacity(count);
            let mut cursor = 0usize;
            for (i, &len) in lengths.iter().enumerate() {
                let gap = rng.random_range(0..=free);
                free -= gap;
                cursor += gap;
                segments.push(GtSegment {
                    start: cursor as f64,
                    end: (cursor + len) as f64,
                    label: class,
                });
                cursor += len;
                if i + 1 < count {
                    cursor += 1;
                }
            }

            let mut is_action = vec![false; t];
            for s in &segments {
                for snippet in is_action
                    .iter_mut()
                    .take(s.end as usize)
                    .skip(s.start as usize)
                {
                    *snippet = true;
                }
            }
            let features = RealMatrix::from_fn(t, cfg.feature_dim, |row, col| {
                let (center, scale) = if is_action[row] {
                    (&centers[class], cfg.action_noise)
                } else {
                    (background, cfg.background_noise)
                };
                let z: f64 = rng.sample(StandardNormal);
                center[col] + scale * z
            });

            gt.videos.insert(video_id.clone(), segments);
            videos.push(SnippetFeatureSet::new(video_id, features)?);
        }
    }
    gt.unit = TimeUnit::Snippet;

    // Interleave classes so clusters are not contiguous in video order.
    use rand::seq::SliceRandom;
    videos.shuffle(&mut rng);

    Ok((Dataset::new(videos, cfg.num_classes)?, gt))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            num_classes: 3,
            videos_per_class: 4,
            snippets_per_video: 20,
            feature_dim: 6,
            separation: 4.0,
            action_noise: 0.5,
            background_noise: 0.5,
            actions_per_video: (1, 2),
            action_length: (3, 5),
            seed: 11,
        }
    }

    #[test]
    fn same_seed_is_identical() {
        let (d1, g1) = generate_synthetic(&small_cfg()).unwrap();
        let (d2, g2) = generate_synthetic(&small_cfg()).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn zero_noise_snippets_equal_their_center() {
        let mut cfg = small_cfg();
        cfg.action_noise = 0.0;
        cfg.background_noise = 0.0;
        let (ds, gt) = generate_synthetic(&cfg).unwrap();
        let scale = cfg.separation / std::f64::consts::SQRT_2;
        for video in &ds.videos {
            let segs = gt.snippet_segments(&video.video_id).unwrap();
            let mut action = vec![None; cfg.snippets_per_video];
            for s in &segs {
                for slot in action
                    .iter_mut()
                    .take(s.end as usize)
                    .skip(s.start as usize)
                {
                    *slot = Some(s.label);
                }
            }
            for (t, slot) in action.iter().enumerate() {
                let axis = slot.unwrap_or(cfg.num_classes);
                for col in 0..cfg.feature_dim {
                    let want = if col == axis { scale } else { 0.0 };
                    assert_eq!(video.features[(t, col)], want);
                }
            }
        }
    }

    #[test]
    fn planted_segments_match_declared_lengths() {
        let (ds, gt) = generate_synthetic(&small_cfg()).unwrap();
        for video in &ds.videos {
            let segs = gt.snippet_segments(&video.video_id).unwrap();
            assert!(!segs.is_empty());
            let mut last_end = -1.0f64;
            for s in &segs {
                assert!(s.start >= 0.0 && s.end <= 20.0);
                assert!(s.start < s.end);
                // At least one background snippet separates segments.
                assert!(s.start > last_end);
                last_end = s.end;
                let len = (s.end - s.start) as usize;
                assert!((3..=5).contains(&len));
            }
        }
        gt.validate_against(&ds).unwrap();
    }

    #[test]
    fn class_sizes_are_uniform() {
        // Chi-square over 1000 videos against the uniform class distribution;
        // the 99th percentile of chi2 with 3 degrees of freedom is 11.345.
        let cfg = SynthConfig {
            num_classes: 4,
            videos_per_class: 250,
            snippets_per_video: 12,
            feature_dim: 8,
            actions_per_video: (1, 1),
            action_length: (2, 4),
            seed: 5,
            ..SynthConfig::default()
        };
        let (ds, gt) = generate_synthetic(&cfg).unwrap();
        let labels = gt.majority_labels(&ds).unwrap();
        let mut counts = vec![0.0f64; 4];
        for l in labels {
            counts[l.unwrap()] += 1.0;
        }
        let expected = 250.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        assert!(chi2 < 11.345, "chi2 = {chi2}");
    }

    #[test]
    fn infeasible_ranges_are_rejected() {
        let mut cfg = small_cfg();
        cfg.actions_per_video = (4, 4);
        cfg.action_length = (5, 5);
        // 4*5 + 3 = 23 > 20
        assert!(generate_synthetic(&cfg).is_err());
        cfg.snippets_per_video = 23;
        assert!(generate_synthetic(&cfg).is_ok());
    }

    #[test]
    fn wide_separation_is_recoverable_by_kmeans() {
        // separation = 10x noise; k-means on mean-pooled action snippets must
        // recover the planted partition almost perfectly.
        let cfg = SynthConfig {
            num_classes: 5,
            videos_per_class: 20,
            snippets_per_video: 30,
            feature_dim: 8,
            separation: 5.0,
            action_noise: 0.5,
            background_noise: 0.5,
            actions_per_video: (1, 2),
            action_length: (4, 8),
            seed: 9,
        };
        let (ds, gt) = generate_synthetic(&cfg).unwrap();
        let labels: Vec<usize> = gt
            .majority_labels(&ds)
            .unwrap()
            .into_iter()
            .map(Option::unwrap)
            .collect();

        let pooled = RealMatrix::from_fn(ds.len(), cfg.feature_dim, |n, c| {
            let video = &ds.videos[n];
            let segs = gt.snippet_segments(&video.video_id).unwrap();
            let mut sum = 0.0;
            let mut count = 0.0;
            for s in &segs {
                for t in s.start as usize..s.end as usize {
                    sum += video.features[(t, c)];
                    count += 1.0;
                }
            }
            sum / count
        });
        let mut rng = SeededRng::for_purpose(1, 0, "test-kmeans");
        let state = crate::clustering::kmeans(&pooled, 5, &mut rng).unwrap();
        let nmi = crate::inference::nmi(&state.assignments, &labels).unwrap();
        assert!(nmi > 0.95, "nmi = {nmi}");
    }
}
