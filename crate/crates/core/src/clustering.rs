//! Attention-weighted global features and K-means over videos.
//!
//! A video's global feature is the attention-weighted sum of its snippet
//! features, with no renormalization, so the attention scale carries into
//! feature space and is absorbed by the distance-based ranking. K-means uses
//! k-means++ seeding and Lloyd sweeps to an assignment fixpoint, re-seeding
//! empty clusters to the farthest point.

use rand::Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{argsort_ascending, euclidean_distance, RealMatrix, SeededRng};

const MAX_SWEEPS: usize = 300;

/// Global video features produced from one attention version.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFeatureTable {
    pub features: RealMatrix,
    /// Iteration whose attention maps produced these features (1-based).
    pub attention_iteration: usize,
}

/// K-means output plus the Euclidean confidence matrix and its rankings.
#[derive(Debug, Clone)]
pub struct ClusterState {
    pub centers: RealMatrix,
    pub assignments: Vec<usize>,
    /// K×N matrix of distances between centers and global features.
    pub confidence: RealMatrix,
    /// Per center: all video indices sorted by ascending distance.
    pub rankings: Vec<Vec<usize>>,
    pub inertia: f64,
    /// Inertia recorded at each sweep, non-increasing.
    pub inertia_trace: Vec<f64>,
}

pub fn uniform_attention(t: usize) -> Result<Vec<f64>> {
    if t == 0 {
        return Err(Error::invalid("attention needs at least one snippet"));
    }
    Ok(vec![1.0 / t as f64; t])
}

/// Attention-weighted snippet sum: `F = Σ_t s_t · x_t`.
pub fn aggregate_global_feature(snippets: &RealMatrix, attention: &[f64]) -> Result<Vec<f64>> {
    if snippets.rows() != attention.len() {
        return Err(Error::invalid(format!(
            "attention length {} does not match {} snippets",
            attention.len(),
            snippets.rows()
        )));
    }
    if !attention.iter().all(|&s| (0.0..=1.0).contains(&s)) {
        return Err(Error::invalid("attention entries must lie in [0, 1]"));
    }
    let mut out = vec![0.0; snippets.cols()];
    for (t, &s) in attention.iter().enumerate() {
        for (o, &x) in out.iter_mut().zip(snippets.row(t)) {
            *o += s * x;
        }
    }
    Ok(out)
}

/// Aggregates every video with its attention vector.
pub fn build_global_features(
    dataset: &Dataset,
    attention: &[Vec<f64>],
    attention_iteration: usize,
) -> Result<GlobalFeatureTable> {
    if attention.len() != dataset.len() {
        return Err(Error::invalid(format!(
            "{} attention maps for {} videos",
            attention.len(),
            dataset.len()
        )));
    }
    let mut rows = Vec::with_capacity(dataset.len() * dataset.feature_dim());
    for (video, att) in dataset.videos.iter().zip(attention) {
        rows.extend(aggregate_global_feature(&video.features, att)?);
    }
    Ok(GlobalFeatureTable {
        features: RealMatrix::from_vec(dataset.len(), dataset.feature_dim(), rows)?,
        attention_iteration,
    })
}

/// K×N matrix of Euclidean distances between centers and features.
pub fn euclidean_confidence_matrix(
    centers: &RealMatrix,
    features: &RealMatrix,
) -> Result<RealMatrix> {
    if centers.cols() != features.cols() {
        return Err(Error::shape(format!(
            "centers are {}-dim but features are {}-dim",
            centers.cols(),
            features.cols()
        )));
    }
    Ok(RealMatrix::from_fn(
        centers.rows(),
        features.rows(),
        |k, n| euclidean_distance(centers.row(k), features.row(n)),
    ))
}

fn nearest_center(centers: &RealMatrix, point: &[f64]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for k in 0..centers.rows() {
        let d = euclidean_distance(centers.row(k), point);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn seed_plus_plus(points: &RealMatrix, k: usize, rng: &mut SeededRng) -> RealMatrix {
    let n = points.rows();
    let mut chosen: Vec<usize> = vec![rng.random_range(0..n)];
    let mut dist_sq: Vec<f64> = (0..n)
        .map(|i| {
            let d = euclidean_distance(points.row(i), points.row(chosen[0]));
            d * d
        })
        .collect();
    while chosen.len() < k {
        let total: f64 = dist_sq.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in dist_sq.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // All remaining mass is zero (duplicated points); take the first
            // index not already chosen.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for i in 0..n {
            let d = euclidean_distance(points.row(i), points.row(next));
            dist_sq[i] = dist_sq[i].min(d * d);
        }
    }
    let dim = points.cols();
    RealMatrix::from_fn(k, dim, |r, c| points[(chosen[r], c)])
}

/// Lloyd's algorithm with k-means++ seeding. Runs to an assignment fixpoint
/// or 300 sweeps; empty clusters re-seed to the point farthest from its
/// current center.
pub fn kmeans(points: &RealMatrix, k: usize, rng: &mut SeededRng) -> Result<ClusterState> {
    let n = points.rows();
    if k == 0 || n < k {
        return Err(Error::invalid(format!(
            "k-means needs 1 <= K <= N, got K={k}, N={n}"
        )));
    }
    let dim = points.cols();
    let mut centers = seed_plus_plus(points, k, rng);
    let mut assignments = vec![0usize; n];
    let mut inertia_trace: Vec<f64> = Vec::new();

    for _sweep in 0..MAX_SWEEPS {
        // Assignment step; ties already resolve to the lowest center index
        // because nearest_center uses strict improvement.
        let mut inertia = 0.0;
        let mut changed = false;
        for i in 0..n {
            let (best, d) = nearest_center(&centers, points.row(i));
            inertia += d * d;
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        if let Some(&prev) = inertia_trace.last() {
            debug_assert!(
                inertia <= prev + 1e-9 * prev.abs().max(1.0),
                "inertia increased: {prev} -> {inertia}"
            );
        }
        inertia_trace.push(inertia);
        if !changed && inertia_trace.len() > 1 {
            break;
        }

        // Update step.
        let mut sums = RealMatrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assignments[i]] += 1;
            let row = sums.row_mut(assignments[i]);
            for (s, &x) in row.iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, &s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            } else {
                // Re-seed an empty cluster to the point farthest from its
                // (stale) center.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = euclidean_distance(points.row(a), centers.row(c));
                        let db = euclidean_distance(points.row(b), centers.row(c));
                        da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                    })
                    .unwrap();
                for (dst, &s) in centers.row_mut(c).iter_mut().zip(points.row(far)) {
                    *dst = s;
                }
            }
        }
    }

    let confidence = euclidean_confidence_matrix(&centers, points)?;
    // Final assignments from the confidence matrix so the two always agree.
    for i in 0..n {
        let col: Vec<f64> = (0..k).map(|c| confidence[(c, i)]).collect();
        assignments[i] = argsort_ascending(&col)[0];
    }
    let rankings: Vec<Vec<usize>> = (0..k)
        .map(|c| argsort_ascending(confidence.row(c)))
        .collect();
    let inertia = *inertia_trace.last().unwrap();

    Ok(ClusterState {
        centers,
        assignments,
        confidence,
        rankings,
        inertia,
        inertia_trace,
    })
}

/// Snippet-wise ablation: cluster the top-`top_k` attention snippets of every
/// video into `num_clusters` groups and label each video by majority vote
/// over its snippets, ties to the lowest cluster index.
pub fn snippetwise_pseudolabels(
    dataset: &Dataset,
    attention: &[Vec<f64>],
    top_k: usize,
    num_clusters: usize,
    rng: &mut SeededRng,
) -> Result<Vec<usize>> {
    if top_k == 0 {
        return Err(Error::invalid("snippet-wise clustering needs top_k >= 1"));
    }
    if attention.len() != dataset.len() {
        return Err(Error::invalid("one attention map per video required"));
    }
    let dim = dataset.feature_dim();
    let mut rows: Vec<f64> = Vec::new();
    let mut owners: Vec<usize> = Vec::new();
    for (n, (video, att)) in dataset.videos.iter().zip(attention).enumerate() {
        let t = video.num_snippets();
        if top_k > t {
            return Err(Error::invalid(format!(
                "top_k {top_k} exceeds video {:?} length {t}",
                video.video_id
            )));
        }
        if att.len() != t {
            return Err(Error::invalid("attention length mismatch"));
        }
        // Highest-attention snippets, ties to the lower snippet index.
        let mut order: Vec<usize> = (0..t).collect();
        order.sort_by(|&a, &b| att[b].partial_cmp(&att[a]).unwrap().then(a.cmp(&b)));
        for &snippet in order.iter().take(top_k) {
            rows.extend_from_slice(video.features.row(snippet));
            owners.push(n);
        }
    }
    let points = RealMatrix::from_vec(owners.len(), dim, rows)?;
    let state = kmeans(&points, num_clusters, rng)?;

    let mut labels = Vec::with_capacity(dataset.len());
    for n in 0..dataset.len() {
        let mut votes = vec![0usize; num_clusters];
        for (i, &owner) in owners.iter().enumerate() {
            if owner == n {
                votes[state.assignments[i]] += 1;
            }
        }
        let best = votes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(c, _)| c)
            .unwrap();
        labels.push(best);
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn uniform_attention_basics() {
        assert_eq!(uniform_attention(4).unwrap(), vec![0.25; 4]);
        assert_eq!(uniform_attention(1).unwrap(), vec![1.0]);
        assert!(uniform_attention(0).is_err());
        for t in 1..50 {
            let s: f64 = uniform_attention(t).unwrap().iter().sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn one_hot_attention_selects_a_row() {
        let x = RealMatrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let f = aggregate_global_feature(&x, &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(f, vec![3.0, 4.0]);
    }

    #[test]
    fn uniform_attention_yields_mean_row() {
        let x = RealMatrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let f = aggregate_global_feature(&x, &uniform_attention(2).unwrap()).unwrap();
        assert_abs_diff_eq!(f[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn aggregate_rejects_bad_attention() {
        let x = RealMatrix::zeros(3, 2);
        assert!(aggregate_global_feature(&x, &[0.5, 0.5]).is_err());
        assert!(aggregate_global_feature(&x, &[0.5, 0.5, 1.5]).is_err());
        assert!(aggregate_global_feature(&x, &[0.5, 0.5, -0.1]).is_err());
    }

    proptest! {
        #[test]
        fn aggregate_matches_naive_loop(
            t in 1usize..8, d in 1usize..6, seed in 0u64..500
        ) {
            let mut rng = SeededRng::new(seed);
            let x = RealMatrix::from_fn(t, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let s: Vec<f64> = (0..t).map(|_| rng.random::<f64>()).collect();
            let f = aggregate_global_feature(&x, &s).unwrap();
            for c in 0..d {
                let mut want = 0.0;
                for r in 0..t {
                    want += s[r] * x[(r, c)];
                }
                prop_assert!((f[c] - want).abs() < 1e-12);
            }
        }

        #[test]
        fn aggregate_is_linear_in_attention(
            t in 1usize..8, d in 1usize..5, seed in 0u64..500, alpha in 0.0f64..1.0
        ) {
            let mut rng = SeededRng::new(seed);
            let x = RealMatrix::from_fn(t, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let s: Vec<f64> = (0..t).map(|_| rng.random::<f64>()).collect();
            let scaled: Vec<f64> = s.iter().map(|v| alpha * v).collect();
            let f = aggregate_global_feature(&x, &s).unwrap();
            let g = aggregate_global_feature(&x, &scaled).unwrap();
            for c in 0..d {
                prop_assert!((g[c] - alpha * f[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identical_points_converge_immediately() {
        let points = RealMatrix::from_fn(6, 3, |_, _| 2.5);
        let mut rng = SeededRng::new(1);
        let state = kmeans(&points, 2, &mut rng).unwrap();
        assert_abs_diff_eq!(state.inertia, 0.0, epsilon = 1e-18);
    }

    #[test]
    fn two_blobs_recover_their_centers() {
        let mut rng = SeededRng::new(7);
        let points = RealMatrix::from_fn(40, 2, |r, _| {
            let sign = if r < 20 { -10.0 } else { 10.0 };
            sign + (rng.random::<f64>() - 0.5) * 0.2
        });
        let mut krng = SeededRng::new(3);
        let state = kmeans(&points, 2, &mut krng).unwrap();
        let mut mags: Vec<f64> = (0..2).map(|k| state.centers[(k, 0)]).collect();
        mags.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_abs_diff_eq!(mags[0], -10.0, epsilon = 0.1);
        assert_abs_diff_eq!(mags[1], 10.0, epsilon = 0.1);
    }

    #[test]
    fn kmeans_is_deterministic_per_seed() {
        let mut rng = SeededRng::new(5);
        let points = RealMatrix::from_fn(30, 4, |_, _| rng.random::<f64>());
        let a = kmeans(&points, 3, &mut SeededRng::new(11)).unwrap();
        let b = kmeans(&points, 3, &mut SeededRng::new(11)).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.centers, b.centers);
    }

    #[test]
    fn kmeans_invariants_hold() {
        let mut rng = SeededRng::new(9);
        let points = RealMatrix::from_fn(25, 3, |_, _| rng.random::<f64>() * 4.0);
        let state = kmeans(&points, 4, &mut SeededRng::new(2)).unwrap();

        for w in state.inertia_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        assert!(state.confidence.as_slice().iter().all(|&d| d >= 0.0));
        for k in 0..4 {
            let r = &state.rankings[k];
            let mut sorted = r.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..25).collect::<Vec<_>>());
            for j in 0..r.len() - 1 {
                assert!(state.confidence[(k, r[j])] <= state.confidence[(k, r[j + 1])]);
            }
        }
        for n in 0..25 {
            let col: Vec<f64> = (0..4).map(|k| state.confidence[(k, n)]).collect();
            let best = argsort_ascending(&col)[0];
            assert_eq!(state.assignments[n], best);
        }
    }

    #[test]
    fn kmeans_rejects_small_n() {
        let points = RealMatrix::zeros(2, 2);
        assert!(kmeans(&points, 3, &mut SeededRng::new(0)).is_err());
        assert!(kmeans(&points, 0, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn confidence_matrix_matches_pairwise_oracle() {
        let mut rng = SeededRng::new(13);
        let centers = RealMatrix::from_fn(3, 4, |_, _| rng.random::<f64>());
        let feats = RealMatrix::from_fn(5, 4, |_, _| rng.random::<f64>());
        let d = euclidean_confidence_matrix(&centers, &feats).unwrap();
        for k in 0..3 {
            for n in 0..5 {
                let want = euclidean_distance(centers.row(k), feats.row(n));
                assert_abs_diff_eq!(d[(k, n)], want, epsilon = 1e-12);
            }
        }
        // Zero distance when a center coincides with a feature.
        let d0 = euclidean_confidence_matrix(&feats, &feats).unwrap();
        for i in 0..5 {
            assert_abs_diff_eq!(d0[(i, i)], 0.0, epsilon = 1e-15);
        }
        // Symmetry under role swap.
        let ab = euclidean_confidence_matrix(&centers, &feats).unwrap();
        let ba = euclidean_confidence_matrix(&feats, &centers).unwrap();
        assert_eq!(ab, ba.transpose());
    }

    #[test]
    fn snippetwise_majority_vote() {
        use crate::dataset::{Dataset, SnippetFeatureSet};
        // Two videos, far-apart snippet groups; k=3 of 4 snippets.
        let mk = |id: &str, base: f64| {
            SnippetFeatureSet::new(
                id,
                RealMatrix::from_fn(4, 2, |r, _| base + r as f64 * 0.01),
            )
            .unwrap()
        };
        let ds = Dataset::new(vec![mk("a", 0.0), mk("b", 100.0)], 2).unwrap();
        let att = vec![vec![0.9, 0.8, 0.7, 0.1]; 2];
        let labels =
            snippetwise_pseudolabels(&ds, &att, 3, 2, &mut SeededRng::new(4)).unwrap();
        assert_ne!(labels[0], labels[1]);

        let one = snippetwise_pseudolabels(&ds, &att, 1, 2, &mut SeededRng::new(4)).unwrap();
        assert_ne!(one[0], one[1]);
        assert!(snippetwise_pseudolabels(&ds, &att, 0, 2, &mut SeededRng::new(4)).is_err());
    }
}
