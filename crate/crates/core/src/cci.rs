//! Clustering Confidence Improvement: k-reciprocal re-ranking of the
//! center-to-video confidence matrix.
//!
//! Centers and videos form one combined universe with a full pairwise
//! distance matrix. Each entity gets a k-reciprocal neighbor set, expanded by
//! absorbing half-sets that overlap at least 2/3, then encoded as exp(-d)
//! weights. The Jaccard distance between encodings blends with the raw
//! Euclidean distance to produce the refined ranking.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::numerics::{argsort_ascending, euclidean_distance, RealMatrix};

/// K centers followed by N videos in one feature space, with the full
/// symmetric pairwise distance matrix.
#[derive(Debug, Clone)]
pub struct EntityUniverse {
    pub num_centers: usize,
    pub features: RealMatrix,
    pub distances: RealMatrix,
}

impl EntityUniverse {
    pub fn new(centers: &RealMatrix, videos: &RealMatrix) -> Result<Self> {
        let features = RealMatrix::vstack(centers, videos)?;
        let size = features.rows();
        // Fill the upper triangle and mirror it so the matrix is exactly
        // symmetric with a zero diagonal.
        let mut distances = RealMatrix::zeros(size, size);
        for i in 0..size {
            for j in i + 1..size {
                let d = euclidean_distance(features.row(i), features.row(j));
                distances[(i, j)] = d;
                distances[(j, i)] = d;
            }
        }
        Ok(EntityUniverse {
            num_centers: centers.rows(),
            features,
            distances,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_videos(&self) -> usize {
        self.len() - self.num_centers
    }
}

/// exp(-distance) weights over the universe; nonzero exactly on the expanded
/// reciprocal set plus the entity itself (self-weight 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ReciprocalEncoding {
    pub weights: Vec<f64>,
}

/// Refined distances and the re-ranked per-center lists.
#[derive(Debug, Clone)]
pub struct RefinedRanking {
    pub refined: RealMatrix,
    pub gamma: f64,
    pub rankings: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CciConfig {
    /// Blend weight on the Jaccard term.
    pub gamma: f64,
    /// Neighborhood size for reciprocal-set construction.
    pub l: usize,
    /// Neighborhood size for local query expansion of encodings.
    pub l_expansion: usize,
    pub query_expansion: bool,
}

impl Default for CciConfig {
    fn default() -> Self {
        CciConfig {
            gamma: 0.7,
            l: 20,
            l_expansion: 6,
            query_expansion: true,
        }
    }
}

fn check_l(universe: &EntityUniverse, l: usize) -> Result<()> {
    if l == 0 || l >= universe.len() {
        return Err(Error::invalid(format!(
            "neighborhood size must satisfy 1 <= l <= {}, got {l}",
            universe.len() - 1
        )));
    }
    Ok(())
}

/// The `l` nearest other entities, ordered by distance with ties broken by
/// lower index.
pub fn top_l_neighbors(universe: &EntityUniverse, entity: usize, l: usize) -> Result<Vec<usize>> {
    check_l(universe, l)?;
    let row = universe.distances.row(entity);
    let mut order = argsort_ascending(row);
    order.retain(|&i| i != entity);
    order.truncate(l);
    Ok(order)
}

/// Mutual-neighbor set: members of N(entity, l) that also list the entity in
/// their own top-l. Returned in ascending index order.
pub fn k_reciprocal_set(universe: &EntityUniverse, entity: usize, l: usize) -> Result<Vec<usize>> {
    let neighbors = top_l_neighbors(universe, entity, l)?;
    let mut out: Vec<usize> = Vec::new();
    for z in neighbors {
        if top_l_neighbors(universe, z, l)?.contains(&entity) {
            out.push(z);
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Expanded set: U(entity, l) plus every half-set U(z, ⌊l/2⌋), z ∈ U(entity, l),
/// whose overlap with U(entity, l) reaches 2/3 of the half-set.
pub fn expand_reciprocal_set(
    universe: &EntityUniverse,
    entity: usize,
    l: usize,
) -> Result<Vec<usize>> {
    let base = k_reciprocal_set(universe, entity, l)?;
    let half = l / 2;
    if half == 0 {
        return Ok(base);
    }
    let base_set: BTreeSet<usize> = base.iter().copied().collect();
    let mut expanded = base_set.clone();
    for &z in &base {
        let half_set = k_reciprocal_set(universe, z, half)?;
        let overlap = half_set.iter().filter(|m| base_set.contains(m)).count();
        if 3 * overlap >= 2 * half_set.len() {
            expanded.extend(half_set);
        }
    }
    Ok(expanded.into_iter().collect())
}

/// Encodes an expanded set as exp(-d) weights; the entity itself always
/// carries weight 1.
pub fn encode_neighbors(
    universe: &EntityUniverse,
    entity: usize,
    expanded: &[usize],
) -> ReciprocalEncoding {
    let mut weights = vec![0.0; universe.len()];
    for &v in expanded {
        weights[v] = (-universe.distances[(entity, v)]).exp();
    }
    weights[entity] = 1.0;
    ReciprocalEncoding { weights }
}

/// Set-form Jaccard distance; two empty sets count as maximally dissimilar.
pub fn jaccard_set_form(a: &[usize], b: &[usize]) -> f64 {
    let sa: BTreeSet<usize> = a.iter().copied().collect();
    let sb: BTreeSet<usize> = b.iter().copied().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    let inter = sa.intersection(&sb).count();
    1.0 - inter as f64 / union as f64
}

/// Weighted Jaccard distance between encodings over the same universe.
pub fn jaccard_encoded(a: &ReciprocalEncoding, b: &ReciprocalEncoding) -> f64 {
    debug_assert_eq!(a.weights.len(), b.weights.len());
    let mut min_sum = 0.0;
    let mut max_sum = 0.0;
    for (&x, &y) in a.weights.iter().zip(&b.weights) {
        min_sum += x.min(y);
        max_sum += x.max(y);
    }
    if max_sum == 0.0 {
        return 1.0;
    }
    1.0 - min_sum / max_sum
}

/// Blends Jaccard distances over reciprocal encodings with the raw Euclidean
/// confidences: `d = γ·d_J + (1-γ)·d_E`. `l` values larger than the universe
/// allows are clamped with a warning.
pub fn refined_distance_matrix(
    d_e: &RealMatrix,
    universe: &EntityUniverse,
    cfg: &CciConfig,
) -> Result<RefinedRanking> {
    if !(0.0..=1.0).contains(&cfg.gamma) {
        return Err(Error::invalid(format!(
            "gamma must lie in [0, 1], got {}",
            cfg.gamma
        )));
    }
    let k = universe.num_centers;
    let n = universe.num_videos();
    if d_e.rows() != k || d_e.cols() != n {
        return Err(Error::shape(format!(
            "confidence matrix is {}x{} but universe has {k} centers and {n} videos",
            d_e.rows(),
            d_e.cols()
        )));
    }
    if cfg.l == 0 || (cfg.query_expansion && cfg.l_expansion == 0) {
        return Err(Error::invalid("neighborhood sizes must be at least 1"));
    }
    let size = universe.len();
    let clamp = |name: &str, value: usize| {
        if value >= size {
            log::warn!(
                "{name}={value} exceeds universe size {size}; clamped to {}",
                size - 1
            );
            size - 1
        } else {
            value
        }
    };
    let l = clamp("l", cfg.l);
    let l_expansion = clamp("l_expansion", cfg.l_expansion);

    let mut encodings: Vec<ReciprocalEncoding> = Vec::with_capacity(size);
    for e in 0..size {
        let expanded = expand_reciprocal_set(universe, e, l)?;
        encodings.push(encode_neighbors(universe, e, &expanded));
    }
    if cfg.query_expansion {
        let mut averaged = Vec::with_capacity(size);
        for e in 0..size {
            let neighbors = top_l_neighbors(universe, e, l_expansion)?;
            let mut w = encodings[e].weights.clone();
            for &z in &neighbors {
                for (acc, &v) in w.iter_mut().zip(&encodings[z].weights) {
                    *acc += v;
                }
            }
            let inv = 1.0 / (neighbors.len() + 1) as f64;
            for v in &mut w {
                *v *= inv;
            }
            averaged.push(ReciprocalEncoding { weights: w });
        }
        encodings = averaged;
    }

    let refined = RealMatrix::from_fn(k, n, |c, v| {
        let d_j = jaccard_encoded(&encodings[c], &encodings[k + v]);
        cfg.gamma * d_j + (1.0 - cfg.gamma) * d_e[(c, v)]
    });
    let rankings: Vec<Vec<usize>> = (0..k)
        .map(|c| argsort_ascending(refined.row(c)))
        .collect();
    Ok(RefinedRanking {
        refined,
        gamma: cfg.gamma,
        rankings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn line_universe(xs: &[f64]) -> EntityUniverse {
        // 1 center (first point) + the rest as videos, 1-D.
        let centers = RealMatrix::from_vec(1, 1, vec![xs[0]]).unwrap();
        let videos =
            RealMatrix::from_vec(xs.len() - 1, 1, xs[1..].to_vec()).unwrap();
        EntityUniverse::new(&centers, &videos).unwrap()
    }

    fn random_universe(
        num_centers: usize,
        num_videos: usize,
        dim: usize,
        seed: u64,
    ) -> EntityUniverse {
        let mut rng = SeededRng::new(seed);
        let centers = RealMatrix::from_fn(num_centers, dim, |_, _| rng.random::<f64>() * 4.0);
        let videos = RealMatrix::from_fn(num_videos, dim, |_, _| rng.random::<f64>() * 4.0);
        EntityUniverse::new(&centers, &videos).unwrap()
    }

    #[test]
    fn universe_distance_matrix_is_symmetric_zero_diagonal() {
        let u = random_universe(3, 7, 4, 1);
        for i in 0..u.len() {
            assert_eq!(u.distances[(i, i)], 0.0);
            for j in 0..u.len() {
                assert!((u.distances[(i, j)] - u.distances[(j, i)]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn top_l_picks_unique_nearest() {
        let u = line_universe(&[0.0, 0.3, 5.0, 9.0]);
        assert_eq!(top_l_neighbors(&u, 0, 1).unwrap(), vec![1]);
    }

    #[test]
    fn top_l_ties_break_by_index() {
        // All four points identical: every distance ties at 0.
        let u = line_universe(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(top_l_neighbors(&u, 2, 2).unwrap(), vec![0, 1]);
        assert_eq!(top_l_neighbors(&u, 0, 3).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn top_l_matches_sort_oracle() {
        let u = random_universe(4, 16, 3, 7);
        for e in 0..u.len() {
            for l in [1, 5, u.len() - 1] {
                let got = top_l_neighbors(&u, e, l).unwrap();
                let mut oracle: Vec<usize> = (0..u.len()).filter(|&i| i != e).collect();
                oracle.sort_by(|&a, &b| {
                    u.distances[(e, a)]
                        .partial_cmp(&u.distances[(e, b)])
                        .unwrap()
                        .then(a.cmp(&b))
                });
                oracle.truncate(l);
                assert_eq!(got, oracle);
            }
        }
    }

    #[test]
    fn top_l_rejects_out_of_range() {
        let u = line_universe(&[0.0, 1.0, 2.0]);
        assert!(top_l_neighbors(&u, 0, 0).is_err());
        assert!(top_l_neighbors(&u, 0, 3).is_err());
    }

    #[test]
    fn mutual_pair_is_reciprocal() {
        let u = line_universe(&[0.0, 0.1, 10.0]);
        assert_eq!(k_reciprocal_set(&u, 0, 1).unwrap(), vec![1]);
        assert_eq!(k_reciprocal_set(&u, 1, 1).unwrap(), vec![0]);
    }

    #[test]
    fn anti_hub_has_empty_reciprocal_set() {
        // Point 2 prefers point 1, but point 1's nearest is point 0.
        let u = line_universe(&[0.0, 0.1, 10.0]);
        assert_eq!(k_reciprocal_set(&u, 2, 1).unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn reciprocal_subset_of_neighbors() {
        let u = random_universe(3, 20, 2, 3);
        for e in 0..u.len() {
            for l in [1, 4, 9] {
                let n: BTreeSet<usize> =
                    top_l_neighbors(&u, e, l).unwrap().into_iter().collect();
                let r = k_reciprocal_set(&u, e, l).unwrap();
                assert!(r.iter().all(|m| n.contains(m)));
                // Mutuality: e is in each member's top-l.
                for &z in &r {
                    assert!(top_l_neighbors(&u, z, l).unwrap().contains(&e));
                }
            }
        }
    }

    #[test]
    fn expansion_includes_base_and_matches_oracle() {
        let u = random_universe(5, 25, 3, 11);
        for e in 0..u.len() {
            for l in [2, 6, 13] {
                let base = k_reciprocal_set(&u, e, l).unwrap();
                let expanded = expand_reciprocal_set(&u, e, l).unwrap();
                let expanded_set: BTreeSet<usize> = expanded.iter().copied().collect();
                for m in &base {
                    assert!(expanded_set.contains(m));
                }

                // Direct set-comprehension oracle over the definition.
                let mut oracle: BTreeSet<usize> = base.iter().copied().collect();
                let base_set = oracle.clone();
                for &z in &base {
                    let half: BTreeSet<usize> =
                        k_reciprocal_set(&u, z, l / 2).unwrap().into_iter().collect();
                    let overlap = half.intersection(&base_set).count() as f64;
                    if overlap >= 2.0 / 3.0 * half.len() as f64 {
                        oracle.extend(half.iter().copied());
                    }
                }
                assert_eq!(expanded_set, oracle);
            }
        }
    }

    #[test]
    fn expansion_absorbs_contained_half_sets() {
        // Tight triple far from everything else: with l=2, each member's
        // half-set (l=1) lies inside the base set and is absorbed.
        let u = line_universe(&[0.0, 0.05, 0.1, 50.0, 60.0]);
        let base = k_reciprocal_set(&u, 0, 2).unwrap();
        assert_eq!(base, vec![1, 2]);
        let expanded = expand_reciprocal_set(&u, 0, 2).unwrap();
        assert_eq!(expanded, vec![1, 2]);
        // l=1 gives an empty half (⌊1/2⌋ = 0): expansion equals the base set.
        assert_eq!(
            expand_reciprocal_set(&u, 0, 1).unwrap(),
            k_reciprocal_set(&u, 0, 1).unwrap()
        );
    }

    #[test]
    fn encoding_weights_follow_distance() {
        let u = line_universe(&[0.0, 0.0, 1.0, 2.0]);
        let enc = encode_neighbors(&u, 0, &[1, 2, 3]);
        assert_eq!(enc.weights[0], 1.0);
        assert_eq!(enc.weights[1], 1.0);
        assert_abs_diff_eq!(enc.weights[2], (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(enc.weights[3], (-2.0f64).exp(), epsilon = 1e-15);
        assert!(enc.weights[1] > enc.weights[2] && enc.weights[2] > enc.weights[3]);
        let sparse = encode_neighbors(&u, 0, &[2]);
        assert_eq!(sparse.weights[1], 0.0);
        assert_eq!(sparse.weights[0], 1.0);
    }

    #[test]
    fn jaccard_set_form_cases() {
        assert_eq!(jaccard_set_form(&[1, 2], &[1, 2]), 0.0);
        assert_eq!(jaccard_set_form(&[1, 2], &[3, 4]), 1.0);
        assert_eq!(jaccard_set_form(&[1, 2, 3], &[2, 3, 4]), 0.5);
        assert_eq!(jaccard_set_form(&[], &[]), 1.0);
    }

    #[test]
    fn jaccard_encoded_cases() {
        let a = ReciprocalEncoding { weights: vec![0.5, 0.0, 1.0] };
        assert_eq!(jaccard_encoded(&a, &a), 0.0);
        let zero = ReciprocalEncoding { weights: vec![0.0; 3] };
        assert_eq!(jaccard_encoded(&zero, &zero), 1.0);
    }

    #[test]
    fn binary_encodings_reduce_to_set_jaccard() {
        let mut rng = SeededRng::new(21);
        for _ in 0..200 {
            let size = rng.random_range(2..50);
            let pick = |rng: &mut SeededRng| -> Vec<usize> {
                (0..size).filter(|_| rng.random::<f64>() < 0.4).collect()
            };
            let sa = pick(&mut rng);
            let sb = pick(&mut rng);
            let binarize = |s: &[usize]| {
                let mut w = vec![0.0; size];
                for &i in s {
                    w[i] = 1.0;
                }
                ReciprocalEncoding { weights: w }
            };
            let got = jaccard_encoded(&binarize(&sa), &binarize(&sb));
            let want = jaccard_set_form(&sa, &sb);
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn jaccard_encoded_matches_loop_oracle() {
        let mut rng = SeededRng::new(33);
        for _ in 0..50 {
            let size = rng.random_range(1..30);
            let gen = |rng: &mut SeededRng| ReciprocalEncoding {
                weights: (0..size)
                    .map(|_| if rng.random::<f64>() < 0.5 { rng.random::<f64>() } else { 0.0 })
                    .collect(),
            };
            let a = gen(&mut rng);
            let b = gen(&mut rng);
            let mut mins = 0.0;
            let mut maxs = 0.0;
            for i in 0..size {
                mins += a.weights[i].min(b.weights[i]);
                maxs += a.weights[i].max(b.weights[i]);
            }
            let want = if maxs == 0.0 { 1.0 } else { 1.0 - mins / maxs };
            let got = jaccard_encoded(&a, &b);
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
            assert!((0.0..=1.0).contains(&got));
        }
    }

    #[test]
    fn gamma_zero_reproduces_euclidean_ranking() {
        let u = random_universe(3, 12, 4, 17);
        let k = u.num_centers;
        let d_e = RealMatrix::from_fn(k, u.num_videos(), |c, v| u.distances[(c, k + v)]);
        let cfg = CciConfig { gamma: 0.0, ..CciConfig::default() };
        let out = refined_distance_matrix(&d_e, &u, &cfg).unwrap();
        assert_eq!(out.refined, d_e);
        for c in 0..k {
            assert_eq!(out.rankings[c], argsort_ascending(d_e.row(c)));
        }
    }

    #[test]
    fn gamma_one_uses_only_jaccard() {
        let u = random_universe(2, 10, 3, 19);
        let k = u.num_centers;
        let d_e = RealMatrix::from_fn(k, u.num_videos(), |c, v| u.distances[(c, k + v)]);
        let cfg = CciConfig { gamma: 1.0, ..CciConfig::default() };
        let out = refined_distance_matrix(&d_e, &u, &cfg).unwrap();
        // Scaling d_E must not change anything at γ=1.
        let scaled = RealMatrix::from_fn(k, u.num_videos(), |c, v| 100.0 * d_e[(c, v)]);
        let out2 = refined_distance_matrix(&scaled, &u, &cfg).unwrap();
        assert_eq!(out.refined, out2.refined);
    }

    #[test]
    fn blend_arithmetic_hits_known_value() {
        // d_J = 0.5 and d_E = 1.0 under γ = 0.7 must produce 0.65.
        let d_j: f64 = 0.5;
        let d_e: f64 = 1.0;
        let gamma = 0.7;
        assert_abs_diff_eq!(gamma * d_j + (1.0 - gamma) * d_e, 0.65, epsilon = 1e-15);
    }

    #[test]
    fn invalid_gamma_and_l_are_rejected() {
        let u = random_universe(2, 6, 2, 23);
        let d_e = RealMatrix::from_fn(2, 6, |c, v| u.distances[(c, 2 + v)]);
        for gamma in [-0.1, 1.1, f64::NAN] {
            let cfg = CciConfig { gamma, ..CciConfig::default() };
            assert!(refined_distance_matrix(&d_e, &u, &cfg).is_err());
        }
        let cfg = CciConfig { l: 0, ..CciConfig::default() };
        assert!(refined_distance_matrix(&d_e, &u, &cfg).is_err());
    }

    #[test]
    fn oversized_l_is_clamped_not_fatal() {
        let u = random_universe(2, 5, 2, 29);
        let d_e = RealMatrix::from_fn(2, 5, |c, v| u.distances[(c, 2 + v)]);
        let cfg = CciConfig { l: 50, l_expansion: 50, ..CciConfig::default() };
        let out = refined_distance_matrix(&d_e, &u, &cfg).unwrap();
        assert_eq!(out.refined.rows(), 2);
        assert_eq!(out.refined.cols(), 5);
        for c in 0..2 {
            let mut sorted = out.rankings[c].clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..5).collect::<Vec<_>>());
        }
    }

    #[test]
    fn planted_clusters_rank_at_least_as_well_after_refinement() {
        use crate::clustering::{build_global_features, kmeans, uniform_attention};
        use crate::dataset::{generate_synthetic, SynthConfig};

        let cfg = SynthConfig {
            num_classes: 5,
            videos_per_class: 12,
            snippets_per_video: 30,
            feature_dim: 8,
            separation: 4.0,
            action_noise: 1.0,
            background_noise: 1.0,
            actions_per_video: (1, 2),
            action_length: (4, 8),
            seed: 2,
        };
        let (ds, gt) = generate_synthetic(&cfg).unwrap();
        let labels: Vec<usize> = gt
            .majority_labels(&ds)
            .unwrap()
            .into_iter()
            .map(Option::unwrap)
            .collect();
        let attention: Vec<Vec<f64>> = ds
            .videos
            .iter()
            .map(|v| uniform_attention(v.num_snippets()).unwrap())
            .collect();
        let table = build_global_features(&ds, &attention, 1).unwrap();
        let state = kmeans(&table.features, 5, &mut SeededRng::new(1)).unwrap();
        let universe = EntityUniverse::new(&state.centers, &table.features).unwrap();
        let refined =
            refined_distance_matrix(&state.confidence, &universe, &CciConfig::default())
                .unwrap();

        let precision_at = |rankings: &Vec<Vec<usize>>| -> f64 {
            let mut total = 0.0;
            for (c, ranking) in rankings.iter().enumerate() {
                // Dominant true class among this center's assigned videos.
                let mut votes = vec![0usize; 5];
                for (n, &a) in state.assignments.iter().enumerate() {
                    if a == c {
                        votes[labels[n]] += 1;
                    }
                }
                let dominant = votes
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i)
                    .unwrap();
                let hits = ranking
                    .iter()
                    .take(10)
                    .filter(|&&n| labels[n] == dominant)
                    .count();
                total += hits as f64 / 10.0;
            }
            total / rankings.len() as f64
        };
        let before = precision_at(&state.rankings);
        let after = precision_at(&refined.rankings);
        assert!(
            after >= before,
            "refinement degraded precision@10: {before} -> {after}"
        );
    }
}
